from cProfile import run
from dvae.config import TrainConfig
from dvae.data import training_images
from dvae.pipeline import train_stage1

config = TrainConfig()
train, _ = training_images(config)

run(
    "train_stage1(train[:64], config, seed=0, steps=1)",
    filename="tmp/dvae.prof",
)
