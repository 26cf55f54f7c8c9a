from setuptools import setup, find_packages

requirements = ["numpy",
                "pandas",
                "scipy",
                "pyyaml",
                "tqdm",
                "matplotlib",
                "requests"]

setup(
    name="DIRandomnessNIZKP",
    version="1.0.0",
    description="Device-independent randomness beacon and beacon-based zero-knowledge proofs",
    long_description_content_type="text/md",
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.10",
    packages=find_packages(exclude=["tests"]),
    install_requires=requirements,
    extras_require={"tests": ["pytest"]},
    entry_points={"console_scripts": ["nizkbeacon=src.__main__:main"]},
)
