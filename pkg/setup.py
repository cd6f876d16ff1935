import setuptools

with open('README.md', 'r', encoding='utf-8') as file:
    long_description = file.read()

setuptools.setup(
    name='nevncd',
    license='GPL-3',
    version='0.1.0dev',
    description='Novel category discovery with view-invariant joint training on synthetic multi-view data',
    long_description=long_description,
    long_description_content_type='text/markdown',
    packages=['nevncd', 'nevncd.Utilities'],
    python_requires='>=3.8',
    install_requires=['wheel',
                      'numpy',
                      'scipy',
                      'scikit-learn',
                      'torch',
                      'openpyxl',
                      'ruamel.yaml'],
    extras_require={'test': ['pytest']},
    entry_points={'console_scripts': 'nevncd = nevncd.nevncd:main'},
    classifiers=["Programming Language :: Python :: 3",
                 "License :: OSI Approved :: GNU General Public License v3 (GPLv3)",
                 "Operating System :: Microsoft :: Windows",
                 "Operating System :: MacOS",
                 "Operating System :: Unix"],
)
