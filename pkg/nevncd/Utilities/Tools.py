# loss terms as named in LossBreakdown
CE = 'ce'
NL = 'nl'
ENTROPY = 'H'
CL_CATEGORY = 'cl_category'
CL_INSTANCE = 'cl_instance'
MSE = 'mse'
VAR = 'var'
BALANCE = 'bal'
DISC = 'disc'
ADV = 'adv'
JOINT = 'joint'
LOSS_NAMES = [CE, NL, ENTROPY, CL_CATEGORY, CL_INSTANCE, MSE, VAR, BALANCE, DISC, ADV]

# loss toggles, CL switches the category contrast, instance contrast and consistency terms together,
# VAR switches the variance and head-balance terms together
CL = 'cl'
LOSS_TOGGLES = [CE, CL, NL, ENTROPY, VAR]
CLUSTERING_TOGGLES = [NL, ENTROPY, VAR]
TOGGLE_TERMS = {CE: [CE],
                CL: [CL_CATEGORY, CL_INSTANCE, MSE],
                NL: [NL],
                ENTROPY: [ENTROPY],
                VAR: [VAR, BALANCE]}

# schedules and modes
ADAPTIVE = 'adaptive'
FIXED = 'fixed'
SCHEDULE_MODES = [ADAPTIVE, FIXED]
BATCHWISE = 'batchwise'
COMPONENTWISE = 'componentwise'
VARIANCE_MODES = [BATCHWISE, COMPONENTWISE]
ADV_OFF = 'off'
ADV_LITERAL = 'literal'
ADV_UNIFORM = 'uniform'
ADVERSARIAL_MODES = [ADV_OFF, ADV_LITERAL, ADV_UNIFORM]
SGD = 'sgd'
ADAM = 'adam'
OPTIMIZERS = [SGD, ADAM]

# parameter partitions
ENCODER = 'encoder'
DISCRIMINATOR = 'discriminator'
ALL = 'all'
PARTITIONS = [ENCODER, DISCRIMINATOR, ALL]

# ablation rows: row name -> enabled loss toggles
SUP = 'sup'
FULL = 'full'
ABLATION_ROWS = {SUP: [CE],
                 NL: [CE, CL, NL],
                 VAR: [CE, CL, VAR],
                 ENTROPY: [CE, CL, ENTROPY],
                 'nl-H': [CE, CL, NL, ENTROPY],
                 'nl-var': [CE, CL, NL, VAR],
                 FULL: [CE, CL, NL, ENTROPY, VAR]}
