import math

import runlog


def test_record_and_list_runs(tmp_path):
    db = tmp_path / "runs.db"
    runlog.init_db(db)
    first = runlog.record_run(db, variant="full", channels=8, blocks=1, scale=2, params=4516, steps=10)
    second = runlog.record_run(
        db, variant="-w/o CFC", channels=8, blocks=1, scale=2, params=3000, steps=20,
        final_loss=0.05, checkpoint="m.glsr", wall_time_s=1.5,
    )
    assert second > first
    runs = runlog.recent_runs(db)
    assert [r["id"] for r in runs] == [second, first]
    assert runs[0]["variant"] == "-w/o CFC"
    assert runs[0]["final_loss"] == 0.05
    assert runs[1]["final_loss"] is None
    assert runs[0]["created_at"]
    assert len(runlog.recent_runs(db, limit=1)) == 1


def test_init_is_idempotent(tmp_path):
    db = tmp_path / "runs.db"
    runlog.init_db(db)
    runlog.record_run(db, variant="full", channels=8, blocks=1, scale=2, params=1, steps=1)
    runlog.init_db(db)
    assert len(runlog.recent_runs(db)) == 1


def test_evals_keep_order_and_infinite_psnr(tmp_path):
    db = tmp_path / "runs.db"
    runlog.init_db(db)
    run_id = runlog.record_run(db, variant="full", channels=8, blocks=1, scale=2, params=1, steps=1)
    runlog.record_eval(db, run_id, "set5", "baby.ppm", 31.25, 0.9)
    runlog.record_eval(db, run_id, "set5", "bird.ppm", math.inf, 1.0)
    runlog.record_eval(db, None, "set5", "orphan.ppm", 20.0, 0.5)
    evals = runlog.run_evals(db, run_id)
    assert [e["image"] for e in evals] == ["baby.ppm", "bird.ppm"]
    assert evals[0]["psnr"] == 31.25
    assert math.isinf(evals[1]["psnr"])
    with runlog.get_connection(db) as conn:
        stored = conn.execute("SELECT psnr FROM evals WHERE image = 'bird.ppm'").fetchone()
    assert stored["psnr"] is None
