"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The dataset behind the published accuracies is request-only, so acceptance is
property-based plus directional synthetic reproduction at desk scale. Run
with ``pytest tests/test_acceptance.py -v -s``. The directional criteria use
frozen seeds; every run is deterministic end to end.
"""

import math
import time

import numpy as np
from scipy import stats as scipy_stats

from masd import corpus, dsp, metrics, synth, trainer
from masd.augment import NoiseConfig, NoiseKind, pink_noise, salt_pepper, sample_noise
from masd.dsp import RawTrial
from masd.experiment import ExperimentSpec, run
from masd.loss import LossConfig, cross_entropy, info_nce, total_loss
from masd.modality import Modality, pseudo_embedding_table
from masd.net import Model, ModelConfig
from masd.seeding import derive_rng
from masd.synth import SynthConfig, TemplateMode
from masd.trainer import TrainConfig


def report(name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def small_model_config(channels: int, dims: tuple[int, int], dropout: float = 0.25) -> ModelConfig:
    return ModelConfig(
        channels=channels, samples=320, n_classes=48, temporal_kernel=25,
        n_temporal_filters=4, depth_multiplier=2, separable_kernel=8,
        pool1=4, pool2=8, dropout_p=dropout, branch_dims=dims,
    )


def synth_envelopes(scfg: SynthConfig, entries, table=None):
    trials = synth.generate(scfg, entries, table)
    return [dsp.preprocess(t) for t in trials]


def test_c01_dsp_oracle_suite():
    start = time.monotonic()
    ramp = dsp.detrend(np.arange(1.0, 101.0))
    ok_detrend = np.abs(ramp).max() < 1e-9
    car = dsp.rereference(np.array([[1.0], [2.0], [3.0]]))
    ok_reref = np.abs(car - np.array([[-1.0], [0.0], [1.0]])).max() < 1e-9

    fs = 1000.0
    t = np.arange(1000) / fs
    ratios = {}
    for freq in (120.0, 50.0, 10.0):
        x = np.sin(2 * np.pi * freq * t)
        y = dsp.bandpass_notch(x, fs)
        ratios[freq] = float(np.sqrt((y**2).mean()) / np.sqrt((x**2).mean()))
    ok_band = ratios[120.0] >= 0.9 and ratios[50.0] <= 0.1 and ratios[10.0] <= 0.1

    env = dsp.hilbert_envelope(2.0 * np.sin(2 * np.pi * 50.0 * t))
    central = env[100:900]
    ok_env = np.abs(central - 2.0).max() / 2.0 < 0.01

    elapsed = time.monotonic() - start
    report(
        "C1 dsp-oracles",
        ok_detrend and ok_reref and ok_band and ok_env and elapsed < 10.0,
        f"detrend/reref exact, probe ratios {ratios[120.0]:.3f}/{ratios[50.0]:.3f}/"
        f"{ratios[10.0]:.4f}, envelope err {np.abs(central - 2.0).max() / 2.0:.4f}, {elapsed:.1f}s",
    )


def test_c02_gradient_correctness():
    start = time.monotonic()
    model = Model(ModelConfig(channels=4, samples=32, n_classes=6, temporal_kernel=7,
                              n_temporal_filters=2, depth_multiplier=2, separable_kernel=4,
                              pool1=4, pool2=8, dropout_p=0.0, branch_dims=(8, 8)), seed=5)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 4, 32))
    labels = np.array([0, 2, 4, 5])
    zt = rng.normal(size=(6, 8))
    zs = rng.normal(size=(6, 8))
    cfg = LossConfig(tau=0.5, lambda_t=1.0, lambda_s=1.0)

    def loss_ce():
        return cross_entropy(model.forward(x).logits, labels)

    def loss_t():
        return info_nce(model.forward(x).features_text, zt[labels], cfg.tau)

    def loss_s():
        return info_nce(model.forward(x).features_speech, zs[labels], cfg.tau)

    def loss_total():
        out = model.forward(x)
        return total_loss(
            cross_entropy(out.logits, labels),
            info_nce(out.features_text, zt[labels], cfg.tau),
            info_nce(out.features_speech, zs[labels], cfg.tau),
            cfg,
        )

    eps = 1e-4
    worst = 0.0
    for fn in (loss_ce, loss_t, loss_s, loss_total):
        model.zero_grad()
        fn().backward()
        for p in model.params():
            flat = p.data.reshape(-1)
            grad = p.grad.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = fn().item()
                flat[i] = orig - eps
                lo = fn().item()
                flat[i] = orig
                fd = (hi - lo) / (2 * eps)
                worst = max(worst, abs(grad[i] - fd) / max(abs(grad[i]), abs(fd), 1e-6))
    elapsed = time.monotonic() - start
    report("C2 gradients", worst < 1e-3 and elapsed < 30.0,
           f"max rel err {worst:.2e} over CE/text/speech/combined, {elapsed:.1f}s")


def test_c03_infonce_closed_forms():
    z = np.random.default_rng(1).normal(size=(1, 8))
    exact_zero = info_nce(z, z, tau=0.01).item() == 0.0

    ln_ok = True
    for b in (2, 8, 48):
        zb = np.tile([1.0, 0.0], (b, 1))
        zm = np.tile([0.6, 0.8], (b, 1))
        ln_ok &= abs(info_nce(zb, zm, tau=0.07).item() - math.log(b)) < 1e-9

    rng = np.random.default_rng(2)
    zb = rng.normal(size=(8, 5))
    zm = rng.normal(size=(8, 5))
    base = info_nce(zb, zm, tau=0.2).item()
    scaled = info_nce(zb * rng.uniform(0.5, 3.0, (8, 1)),
                      zm * rng.uniform(0.5, 3.0, (8, 1)), tau=0.2).item()
    scale_ok = abs(base - scaled) <= 1e-9
    report("C3 infonce-closed-forms", exact_zero and ln_ok and scale_ok,
           f"B=1 exact 0, lnB within 1e-9 for B in (2,8,48), scale drift {abs(base - scaled):.1e}")


def test_c04_noise_statistics():
    start = time.monotonic()
    n = 10**6
    x = np.random.default_rng(3).normal(size=n)
    sp = salt_pepper(x, 0.05, 0.05, derive_rng(4))
    frac = float(np.mean(sp != x))
    ok_sp = abs(frac - 0.10) < 0.002

    x = pink_noise(2**16, alpha=1.0, rng=derive_rng(5))
    psd = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(2**16)
    slope = float(np.polyfit(np.log(freqs[2 : 2**13]), np.log(psd[2 : 2**13]), 1)[0])
    ok_pink = abs(slope + 1.0) < 0.2

    poisson = sample_noise(NoiseConfig(kind=NoiseKind.POISSON, kappa=4.0), n, derive_rng(6))
    ok_poisson = abs(float(poisson.mean())) < 0.01

    elapsed = time.monotonic() - start
    report("C4 noise-stats", ok_sp and ok_pink and ok_poisson and elapsed < 30.0,
           f"s&p frac {frac:.4f}, pink slope {slope:.3f}, poisson mean {poisson.mean():+.4f}, {elapsed:.1f}s")


def test_c05_chance_level_calibration():
    start = time.monotonic()
    entries = corpus.load_corpus()
    top1s, top5s = [], []
    for seed in range(5):
        scfg = SynthConfig(n_subjects=1, channels=8, snr_db=10.0,
                           template_mode=TemplateMode.RANDOM_LABEL, seed=seed)
        env = synth_envelopes(scfg, entries)
        plan = trainer.split_within(env, fold=0, seed=seed)
        model = Model(small_model_config(8, (16, 16)), seed=seed + 100)
        cfg = TrainConfig(batch_size=48, max_epochs=6, patience=6, seed=seed + 100)
        trainer.fit(model, plan, env, cfg)
        scores = trainer.evaluate_split(model, plan, env, cfg)
        top1s.append(scores["top1"])
        top5s.append(scores["top5"])
    top1 = float(np.mean(top1s))
    top5 = float(np.mean(top5s))
    elapsed = time.monotonic() - start
    report("C5 chance-calibration",
           0.01 <= top1 <= 0.04 and 0.07 <= top5 <= 0.14 and elapsed < 300.0,
           f"random-label top1 {top1:.4f} (chance 0.0208), top5 {top5:.4f} (chance 0.1042), {elapsed:.0f}s")


def test_c06_learnability():
    start = time.monotonic()
    entries = corpus.load_corpus()
    scfg = SynthConfig(n_subjects=1, channels=8, snr_db=20.0,
                       template_mode=TemplateMode.SEPARABLE, seed=7)
    env = synth_envelopes(scfg, entries)
    plan = trainer.split_within(env, fold=0, seed=7)
    model = Model(small_model_config(8, (16, 16)), seed=77)
    cfg = TrainConfig(batch_size=48, max_epochs=60, patience=15, seed=77)
    result = trainer.fit(model, plan, env, cfg)
    scores = trainer.evaluate_split(model, plan, env, cfg)
    elapsed = time.monotonic() - start
    report("C6 learnability",
           scores["top1"] >= 0.90 and result.epochs_run <= 100 and elapsed < 300.0,
           f"+20dB separable top1 {scores['top1']:.3f} in {result.epochs_run} epochs, {elapsed:.0f}s")


def test_c07_masd_directional_benefit():
    start = time.monotonic()
    entries = corpus.load_corpus()
    singles, masds = [], []
    for seed in range(10):
        text = pseudo_embedding_table(entries, Modality.TEXT, dim=64,
                                      seed=seed * 7 + 1, crowding=0.75)
        speech = pseudo_embedding_table(entries, Modality.SPEECH, dim=64,
                                        seed=seed * 7 + 2, crowding=0.75)
        scfg = SynthConfig(n_subjects=1, channels=8, snr_db=0.0,
                           template_mode=TemplateMode.CLASS_STRUCTURED,
                           embedding_coupling=1.0, seed=seed)
        env = synth_envelopes(scfg, entries, text)
        plan = trainer.split_within(env, fold=0, seed=seed)
        for label, tables in (("single", (None, None)), ("masd", (text, speech))):
            model = Model(small_model_config(8, (64, 64)), seed=seed + 1000)
            cfg = TrainConfig(batch_size=48, max_epochs=30, patience=30, seed=seed + 1000,
                              loss=LossConfig(tau=0.05, lambda_t=1.0, lambda_s=1.0))
            trainer.fit(model, plan, env, cfg, text_table=tables[0], speech_table=tables[1])
            scores = trainer.evaluate_split(model, plan, env, cfg)
            (singles if label == "single" else masds).append(scores["top5"])
    deltas = np.array(masds) - np.array(singles)
    wins = int((deltas > 0).sum())
    losses = int((deltas < 0).sum())
    p_value = scipy_stats.binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue
    elapsed = time.monotonic() - start
    report(
        "C7 masd-benefit",
        np.mean(masds) >= np.mean(singles) and p_value < 0.1 and elapsed < 1200.0,
        f"top5 single {np.mean(singles):.3f} vs masd {np.mean(masds):.3f} "
        f"({wins}/{wins + losses} wins, sign-test p={p_value:.4f}), {elapsed:.0f}s",
    )


def test_c08_augmentation_directional_benefit():
    start = time.monotonic()
    entries = corpus.load_corpus()
    plains, augs = [], []
    for seed in range(10):
        text = pseudo_embedding_table(entries, Modality.TEXT, dim=64,
                                      seed=seed * 7 + 1, crowding=0.75)
        scfg = SynthConfig(n_subjects=1, channels=8, snr_db=-5.0,
                           template_mode=TemplateMode.CLASS_STRUCTURED,
                           embedding_coupling=1.0, seed=seed)
        env = synth_envelopes(scfg, entries, text)
        plan = trainer.split_within(env, fold=0, seed=seed)
        noise = NoiseConfig(kind=NoiseKind.SALT_PEPPER, p_s=0.05, p_p=0.05, copies=1)
        for label, aug in (("plain", None), ("aug", noise)):
            model = Model(small_model_config(8, (64, 64)), seed=seed + 1000)
            cfg = TrainConfig(batch_size=48, max_epochs=25, patience=25, seed=seed + 1000,
                              augmentation=aug)
            trainer.fit(model, plan, env, cfg)
            scores = trainer.evaluate_split(model, plan, env, cfg)
            (plains if label == "plain" else augs).append(scores["top5"])
    elapsed = time.monotonic() - start
    report(
        "C8 augmentation-benefit",
        np.mean(augs) >= np.mean(plains) and elapsed < 1200.0,
        f"top5 plain {np.mean(plains):.3f} vs salt&pepper {np.mean(augs):.3f} "
        f"(delta {np.mean(augs) - np.mean(plains):+.3f}), {elapsed:.0f}s",
    )


def test_c09_protocol_exactness():
    trials = [dsp.EnvelopeTrial(data=np.zeros((1, 4)), word_id=w, block=b, subject=0)
              for b in range(15) for w in range(48)]
    plan = trainer.split_within(trials, fold=2, seed=3)
    sizes = (plan.train_idx.size, plan.val_idx.size, plan.test_idx.size)
    blocks = [{trials[i].block for i in idx}
              for idx in (plan.train_idx, plan.val_idx, plan.test_idx)]
    disjoint = not (blocks[0] & blocks[1] or blocks[0] & blocks[2] or blocks[1] & blocks[2])

    multi = [dsp.EnvelopeTrial(data=np.zeros((1, 4)), word_id=w, block=b, subject=s)
             for s in range(9) for b in range(15) for w in range(48)]
    loso = trainer.split_cross(multi, held_out_subject=4, seed=3)
    loso_sizes = (loso.train_idx.size, loso.val_idx.size, loso.test_idx.size)

    report("C9 protocol-exactness",
           sizes == (480, 96, 144) and disjoint and loso_sizes == (5040, 720, 720),
           f"within {sizes} block-disjoint={disjoint}, loso {loso_sizes}")


def test_c10_determinism(tmp_path):
    entries = corpus.load_corpus()
    scfg = SynthConfig(n_subjects=1, n_blocks=5, channels=6, snr_db=15.0, seed=21)
    synth.write_dataset(synth.generate(scfg, entries), tmp_path / "ds")

    def one(out):
        spec = ExperimentSpec(
            command="train", dataset=str(tmp_path / "ds"), out=str(out),
            repeats=2, folds=1, seed=13,
            train=TrainConfig(batch_size=48, max_epochs=2, patience=2),
            model={"temporal_kernel": 9, "n_temporal_filters": 2, "separable_kernel": 4,
                   "branch_dim_t": 8, "branch_dim_s": 8},
            save_checkpoints=False,
        )
        assert run(spec) == 0
        return (out / "results.csv").read_bytes()

    same = one(tmp_path / "a") == one(tmp_path / "b")
    report("C10 determinism", same, "two runs of one spec+seed give byte-identical results CSV")


def test_c11_dataset_roundtrip(tmp_path):
    start = time.monotonic()
    entries = corpus.load_corpus()
    scfg = SynthConfig(n_subjects=1, channels=8, snr_db=5.0, seed=31)
    trials = synth.generate(scfg, entries)
    assert len(trials) == 720
    synth.write_dataset(trials, tmp_path / "ds")
    loaded = synth.read_dataset(tmp_path / "ds")
    bitwise = all(np.array_equal(a.data, b.data)
                  and (a.fs, a.word_id, a.block, a.subject) == (b.fs, b.word_id, b.block, b.subject)
                  for a, b in zip(trials, loaded))
    elapsed = time.monotonic() - start
    report("C11 dataset-roundtrip", bitwise and elapsed < 5.0,
           f"720 trials bitwise identical, {elapsed:.2f}s")
