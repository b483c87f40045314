import json

import numpy as np
import pytest

from ridgevlp.ablation import COLUMNS, ablate, arm_configs
from ridgevlp.checkpoint import load_checkpoint, save_checkpoint
from ridgevlp.config import RunConfig, load_config, parse_assignments
from ridgevlp.data import BatchBuilder, batch_indices, encode_texts, load_studies, make_vocab
from ridgevlp.errors import CheckpointError, ConfigurationError
from ridgevlp.evaluate import eval_retrieval, ranks_of_truth, recall_at_k
from ridgevlp.imaging import load_image
from ridgevlp.reports import generate_manuscript
from ridgevlp.synth import ENTITIES, POSITIONS, make_study, synth_dataset
from ridgevlp.train import LOG_NAME, load_model, load_state, loss_reduction, pretrain


def small_config(**kw):
    base = dict(d=16, d_proj=8, heads=2, blocks=1, mlp_ratio=2, batch_size=4, steps=6,
                max_len=48, scales=(1.0, 2.0))
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    train = synth_dataset(12, 0, root / "train")
    held = synth_dataset(6, 1, root / "eval")
    cfg = small_config()
    return train, held, load_studies(train, cfg), load_studies(held, cfg)


# -- synthetic data -----------------------------------------------------------

def test_synth_is_deterministic(tmp_path):
    a = synth_dataset(3, 7, tmp_path / "a")
    b = synth_dataset(3, 7, tmp_path / "b")
    assert a.read_bytes() == b.read_bytes()
    for rec in map(json.loads, a.read_text().splitlines()):
        assert (tmp_path / "a" / rec["image"]).read_bytes() == \
            (tmp_path / "b" / rec["image"]).read_bytes()
    assert synth_dataset(3, 8, tmp_path / "c").read_bytes() != a.read_bytes()


def test_synth_needs_one_study(tmp_path):
    with pytest.raises(ConfigurationError):
        synth_dataset(0, 0, tmp_path)


@pytest.mark.parametrize("index", range(40))
def test_synthetic_triplets_describe_the_image(index):
    st = make_study(index, 3)
    present = {(t.entity, t.position) for t in st.triplets if t.exist == "present"}
    absent = {(t.entity, t.position) for t in st.triplets if t.exist == "absent"}
    assert present == {(s["entity"], s["position"]) for s in st.structures}
    assert len(absent) <= 2 and not present & absent
    assert all(e in ENTITIES and p in POSITIONS for e, p in present | absent)
    assert st.image.shape == (32, 32) and 0 <= st.image.min() and st.image.max() <= 1
    for s in st.structures:
        r0 = 0 if s["position"].startswith("upper") else 16
        c0 = 0 if s["position"].endswith("left") else 16
        assert st.image[r0:r0 + 16, c0:c0 + 16].max() > 0.35
    # every image quadrant without a structure stays dark
    occupied = {s["position"] for s in st.structures}
    for p in set(POSITIONS) - occupied:
        r0 = 0 if p.startswith("upper") else 16
        c0 = 0 if p.endswith("left") else 16
        assert st.image[r0:r0 + 16, c0:c0 + 16].max() < 0.3


def test_synthetic_studies_give_valid_manuscripts():
    m = generate_manuscript(make_study(0, 0).triplets)
    assert m.full_text.endswith(".")


# -- configuration ------------------------------------------------------------

def test_config_file_round_trip(tmp_path):
    cfg = RunConfig(scales=(1.0, 3.0), mask_mode="random", text_paired=False, seed=4)
    cfg.save(tmp_path / "c.txt")
    assert load_config(tmp_path / "c.txt") == cfg


def test_config_overrides_and_sections(tmp_path):
    (tmp_path / "c.ini").write_text("[run]\n# comment\nsteps = 10  # inline\n; other\n"
                                    "report_format = \"passthrough\"\n")
    cfg = load_config(tmp_path / "c.ini", ["steps=12", "scales=[1, 2]"])
    assert cfg.steps == 12 and cfg.report_format == "passthrough" and cfg.scales == (1.0, 2.0)


@pytest.mark.parametrize("override", ["nope=1", "steps=ten", "steps", "image_mask_ratio=1.5",
                                      "mask_mode=sometimes", "patch_size=5", "text_paired=maybe"])
def test_bad_overrides(override):
    with pytest.raises(ConfigurationError):
        load_config(None, [override])


def test_bad_config_line():
    with pytest.raises(ConfigurationError):
        parse_assignments("steps 10\n")


def test_hash_ignores_paths_only():
    base = RunConfig()
    assert base.with_overrides({"data": "x", "out_dir": "y", "checkpoint_every": 5}).hash == base.hash
    assert base.with_overrides({"seed": 1}).hash != base.hash


# -- checkpoints ----------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    blobs = {"a": rng.normal(size=(2, 3)), "b": np.array(1.5), "c/ü": rng.normal(size=4)}
    save_checkpoint(tmp_path / "x.ckpt", blobs, "f" * 64, {"step": 3})
    got, h, meta = load_checkpoint(tmp_path / "x.ckpt", "f" * 64)
    assert h == "f" * 64 and meta == {"step": 3}
    for k in blobs:
        assert got[k].shape == blobs[k].shape
        np.testing.assert_array_equal(got[k], blobs[k])


def test_checkpoint_rejections(tmp_path):
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, {"a": np.zeros(2)}, "a" * 64, {})
    with pytest.raises(CheckpointError, match="hash mismatch"):
        load_checkpoint(path, "b" * 64)
    path.write_bytes(path.read_bytes() + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(path)
    path.write_bytes(b"NOTACKPT" + bytes(80))
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(path)


# -- batches --------------------------------------------------------------------

def test_batches_are_deterministic(corpus):
    _, _, data, _ = corpus
    cfg = small_config()
    text = encode_texts(data.texts(cfg.report_format), make_vocab(data.texts("manuscript"), cfg), 48)
    a = BatchBuilder(data, text, cfg).build([0, 3, 5, 7], step=2)
    b = BatchBuilder(data, text, cfg).build([0, 3, 5, 7], step=2)
    for f in ("patch_mask", "ids_masked", "text_mask", "neg_index"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
    assert (a.patch_mask.sum(axis=1) == 12).all()  # round_half_up(0.75 * 16)
    assert not np.any(a.neg_index == np.arange(4))
    none = BatchBuilder(data, text, cfg.with_overrides({"mask_mode": "none"})).build([0, 1], 0)
    assert not none.patch_mask.any()


def test_batch_indices_cover_each_epoch():
    seen = np.concatenate([batch_indices(12, 4, 0, s) for s in range(3)])
    assert sorted(seen) == list(range(12))
    with pytest.raises(ConfigurationError):
        batch_indices(3, 4, 0, 0)


# -- training -------------------------------------------------------------------

def test_training_is_deterministic(corpus, tmp_path):
    train, _, data, _ = corpus
    cfg = small_config(data=str(train))
    pretrain(cfg, out_dir=tmp_path / "a", figures=False)
    pretrain(cfg, out_dir=tmp_path / "b", figures=False)
    assert (tmp_path / "a" / LOG_NAME).read_bytes() == (tmp_path / "b" / LOG_NAME).read_bytes()
    rows = [json.loads(l) for l in (tmp_path / "a" / LOG_NAME).read_text().splitlines()]
    assert [r["step"] for r in rows] == list(range(6))
    for r in rows:
        assert abs(r["mvlm_text"] + r["mvlm_image"] + r["itc"] + r["itm"] - r["total"]) < 1e-12


def test_run_directory_contents(corpus, tmp_path):
    _, _, data, _ = corpus
    pretrain(small_config(), data=data, out_dir=tmp_path)
    for name in ("checkpoint.ckpt", "loss_log.jsonl", "config.txt", "vocab.txt", "loss_curve.png"):
        assert (tmp_path / name).stat().st_size > 0


def test_resume_reproduces_uninterrupted_run(corpus, tmp_path):
    _, _, data, _ = corpus
    cfg = small_config()
    full = pretrain(cfg, data=data, out_dir=tmp_path / "full", figures=False)
    pretrain(cfg, data=data, out_dir=tmp_path / "part", stop_at=3, figures=False)
    resumed = pretrain(cfg, data=data, out_dir=tmp_path / "part",
                       resume=tmp_path / "part" / "checkpoint.ckpt", figures=False)
    assert resumed.log_rows == full.log_rows
    assert (tmp_path / "part" / LOG_NAME).read_bytes() == (tmp_path / "full" / LOG_NAME).read_bytes()
    for k in full.params:
        assert resumed.params[k].shape == full.params[k].shape
        np.testing.assert_array_equal(resumed.params[k], full.params[k])


def test_checkpoint_under_other_config_is_rejected(corpus, tmp_path):
    _, _, data, _ = corpus
    cfg = small_config()
    pretrain(cfg, data=data, out_dir=tmp_path, figures=False)
    with pytest.raises(CheckpointError):
        load_state(tmp_path / "checkpoint.ckpt", cfg.with_overrides({"lr": 1e-3}))
    load_model(tmp_path / "checkpoint.ckpt", cfg.with_overrides({"out_dir": "elsewhere"}))


def test_training_input_errors(corpus):
    _, _, data, _ = corpus
    with pytest.raises(ConfigurationError):
        pretrain(small_config(), write_files=False)
    with pytest.raises(ConfigurationError):
        pretrain(small_config(batch_size=32), data=data, write_files=False)


def test_loss_reduction():
    rows = [{"total": 2.0}] * 20 + [{"total": 1.0}] * 20
    assert loss_reduction(rows) == 0.5
    with pytest.raises(ConfigurationError):
        loss_reduction(rows[:5])


# -- retrieval ------------------------------------------------------------------

def test_ranks_break_ties_by_index():
    np.testing.assert_array_equal(ranks_of_truth(np.zeros((4, 4))), [0, 1, 2, 3])
    assert recall_at_k(np.zeros((4, 4)), 1) == {"i2t": 0.25, "t2i": 0.25}
    assert recall_at_k(np.eye(3), 1) == {"i2t": 1.0, "t2i": 1.0}


def test_recall_k_bounds(rng):
    sim = rng.normal(size=(5, 5))
    assert recall_at_k(sim, 5) == {"i2t": 1.0, "t2i": 1.0}
    with pytest.raises(ConfigurationError):
        recall_at_k(sim, 6)
    with pytest.raises(ConfigurationError):
        recall_at_k(sim, 0)


def test_random_scores_are_at_chance(rng):
    hits = np.mean([recall_at_k(rng.normal(size=(32, 32)), 1)["i2t"] for _ in range(2000)])
    assert abs(hits - 1 / 32) < 0.004


def test_eval_on_trained_model(corpus):
    _, _, data, held = corpus
    cfg = small_config()
    st = pretrain(cfg, data=data, write_files=False)
    out = eval_retrieval(st.params, st.model_cfg, st.vocab, held, cfg, k=len(held))
    assert out["i2t"] == out["t2i"] == 1.0 and out["n"] == 6
    with pytest.raises(ConfigurationError):
        eval_retrieval(st.params, st.model_cfg, st.vocab, held, cfg, k=7)


# -- ablation -------------------------------------------------------------------

def test_arms_differ_only_along_the_axis():
    cfg = small_config()
    arms = arm_configs(cfg, "report")
    assert [a for a, _ in arms] == ["passthrough", "triplet_string", "manuscript"]
    for _, c in arms:
        assert c.with_overrides({"report_format": cfg.report_format}) == cfg
    labels = [a for a, _ in arm_configs(cfg, "masking", mask_ratios=(0.5, 0.75))]
    assert labels == ["none", "random@0.5", "random@0.75", "filter_guided@0.5",
                      "filter_guided@0.75"]
    with pytest.raises(ConfigurationError):
        arm_configs(cfg, "optimizer")
    with pytest.raises(ConfigurationError):
        arm_configs(cfg, "masking", arms=["sometimes"])


def test_ablation_rows_and_outputs(corpus, tmp_path):
    _, _, data, held = corpus
    res = ablate(small_config(steps=3), "masking", data, held, seeds=(0, 1), out_dir=tmp_path)
    assert len(res.rows) == 6
    assert [r["arm"] for r in res.rows] == ["none"] * 2 + ["random"] * 2 + ["filter_guided"] * 2
    assert list(res.summary()) == ["none", "random", "filter_guided"]
    # a 3-step run has no 20-step window
    assert all(np.isnan(r["loss_ratio"]) for r in res.rows)
    header = (tmp_path / "ablation_masking.csv").read_text().splitlines()[0]
    assert header == ",".join(COLUMNS)
    assert (tmp_path / "ablation_masking.png").stat().st_size > 0
    assert len((tmp_path / "ablation_masking.txt").read_text().splitlines()) == 4


def test_ablation_needs_seeds(corpus):
    _, _, data, held = corpus
    with pytest.raises(ConfigurationError):
        ablate(small_config(), "report", data, held, seeds=())


def test_loaded_images_match_the_synthetic_source(corpus):
    train, _, data, _ = corpus
    rec = json.loads(train.read_text().splitlines()[0])
    np.testing.assert_array_equal(load_image(train.parent / rec["image"], 32), data.images[0])
    np.testing.assert_allclose(data.images[0], make_study(0, 0).image, atol=0.5 / 255 + 1e-12)


def test_published_optimizer_defaults():
    cfg = RunConfig()
    assert (cfg.weight_decay, cfg.lr, cfg.lr_min, cfg.warmup_frac) == (0.05, 3e-4, 1e-5, 0.1)
    assert cfg.text_paired and cfg.mask_mode == "filter_guided"
