from nevncd import Core, Model, Losses, Sampler, SynthData, Evaluation, Trainer, RunConfig
name = 'nevncd'
