import numpy as np

from fmnd.experiments import DeskRun, cached_desk_training, run_desk_training
from fmnd.neural.train import TrainingLog

TINY = DeskRun(epochs=2, streams=4, n_utterances=2, utterance_s=0.3, train_fraction=0.5,
               hidden_size=4, lookahead=5, tbptt=50)


def test_desk_run_artifacts_and_reuse(tmp_path):
    out = tmp_path / "run"
    first = run_desk_training(TINY, out)
    assert {p.name for p in out.iterdir()} == {"model.fmnn", "training_log.csv",
                                               "heldout_clean.txt", "run.txt"}
    assert len(first.log.records) == 3
    again = cached_desk_training(TINY, out)
    assert np.array_equal(again.net.flat(), first.net.flat())
    assert again.log.final_val_mse == first.log.final_val_mse
    assert again.clean_report.output_snr_db == first.clean_report.output_snr_db
    stamp = (out / "model.fmnn").stat().st_mtime_ns
    other = DeskRun(**{**TINY.__dict__, "epochs": 1})
    cached_desk_training(other, out)
    assert (out / "model.fmnn").stat().st_mtime_ns != stamp


def test_log_csv_round_trip(tmp_path):
    run = run_desk_training(DeskRun(**{**TINY.__dict__, "epochs": 1}))
    path = tmp_path / "log.csv"
    run.log.write_csv(path)
    back = TrainingLog.read_csv(path)
    assert [r.val_mse for r in back.records] == [r.val_mse for r in run.log.records]
    assert np.isnan(back.records[0].train_mse)


def test_memoryless_and_augmented_configs():
    run = DeskRun(aug_snr_db=(0, 10), memoryless=True)
    assert run.aug_snr_db == (0.0, 10.0)
    cfg = run.network_config()
    assert cfg.lookahead_samples == 0 and cfg.context_steps == 1
    chans = run.channels(3, 1)
    assert len(chans) == 3 and all(0.0 <= c.amplitude_snr_db <= 10.0 for c in chans)
