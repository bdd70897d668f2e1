"""Tiny run configurations for fast end-to-end tests."""

from zoomloc.encoder import EncoderConfig
from zoomloc.experiment import DataConfig, RunConfig
from zoomloc.geo import PyramidConfig
from zoomloc.nn import DecoderConfig
from zoomloc.world import WorldConfig


def tiny_config(**overrides) -> RunConfig:
    base = dict(
        pyramid=PyramidConfig(num_steps=2, aoi_side=400.0),
        world=WorldConfig(extent=400.0, tile_resolution=32, tile_supersample=2, obs_height=16, obs_width=32,
                          obs_supersample=1),
        encoder=EncoderConfig(patch_size=16, embed_dim=32, depth=1, heads=4, trainable_depth=1, max_grid=4),
        decoder=DecoderConfig(hidden_dim=32, layers=1, heads=4, max_seq_len=16),
        data=DataConfig(world_seed=3, episode_seed=4, episodes=240, eval_fraction=0.1),
        epochs=1,
        batch_size=16,
        max_steps=6,
        seed=0,
    )
    base.update(overrides)
    return RunConfig(**base)
