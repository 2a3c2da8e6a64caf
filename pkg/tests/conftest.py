import numpy as np
import pytest
import torch
from scipy.spatial.transform import Rotation as ScipyRotation

from geomrep.geometry import Camera, Rotation3
from geomrep.skeleton import default_human_tree
from geomrep.synthdata import DataConfig, DatasetReader, generate_dataset

torch.set_num_threads(2)


def random_rotation(seed) -> Rotation3:
    return Rotation3(ScipyRotation.random(random_state=seed).as_matrix())


def simple_camera(rotation=None, translation=(0.0, 0.0, 0.0)) -> Camera:
    return Camera(
        rotation=rotation or Rotation3.identity(),
        translation=np.asarray(translation, float),
        focal=np.array([500.0, 500.0]),
        principal_point=np.array([128.0, 128.0]),
        image_size=np.array([256.0, 256.0]),
    )


@pytest.fixture(scope="session")
def tree():
    return default_human_tree()


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """60 real + 12 virtual pairs; shared across test modules."""
    out = tmp_path_factory.mktemp("ds") / "small"
    cfg = DataConfig(seed=5, num_pairs=60, num_virtual_pairs=12)
    generate_dataset(cfg, out)
    return out


@pytest.fixture()
def small_reader(small_dataset):
    return DatasetReader(small_dataset)
