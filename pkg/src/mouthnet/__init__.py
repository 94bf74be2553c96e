"""Face-forgery detection from mouth motion.

A self-contained pipeline: mouth-crop preprocessing from precomputed facial
landmarks, a spatio-temporal feature extractor (ResNet-18 trunk behind a 3-D
convolutional front-end), a multi-scale temporal convolutional classifier,
training loops for lipreading pretraining and forgery finetuning, a
corruption-robustness benchmark, and video-level evaluation protocols.
Everything runs on numpy; no deep-learning framework is required.
"""

__version__ = "0.1.0"
