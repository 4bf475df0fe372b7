import numpy as np
import pandas as pd
import pytest
import toml

from nfsecure_utils.benders_decomposition import Design
from nfsecure_utils.data_validation import DataValidationError
from nfsecure_utils.output_writer import (
    DESIGN_COLUMNS,
    OutputWriter,
    beampattern_frame,
    design_frame,
    output_filename,
    write_outputs,
)


def test_filenames():
    assert output_filename("gbd", 0, 3, 0.15) == "gbd_seed0_g1-3_g2-0.15.csv"
    assert output_filename("pareto", 3, [0, 1, 2], [0.1, 0.5]) == "pareto_seed3_g1-0-2_g2-0.1-0.5.csv"
    assert output_filename("gbd", 1, 2, 0.1, kind="trace") == "gbd_trace_seed1_g1-2_g2-0.1.csv"
    assert output_filename("sweep", 1, [], 0.1) == "sweep_seed1_g1-none_g2-0.1.csv"


def test_beampattern_frame_layout():
    grid = np.arange(6, dtype=float).reshape(2, 3) / 5.0
    frame = beampattern_frame(grid, [30.0, 90.0, 150.0], [1.0, 2.5])
    assert list(frame.columns) == ['distance_m\\angle_deg', '30', '90', '150']
    assert frame.shape == (2, 4)
    assert frame.iloc[1, 0] == 2.5
    assert np.allclose(frame.iloc[:, 1:].to_numpy(), grid)


def test_beampattern_frame_shape_mismatch():
    with pytest.raises(DataValidationError):
        beampattern_frame(np.zeros((3, 2)), [30.0, 90.0, 150.0], [1.0, 2.5])


def test_infeasible_design_row():
    frame = design_frame(Design.infeasible("gbd", 3), "gbd", 3, 0.1, 0)
    assert list(frame.columns) == DESIGN_COLUMNS
    row = frame.iloc[0]
    assert row['status'] == "infeasible"
    assert np.isnan(row['power_w'])
    assert row['served'] == 0


def test_rewrites_are_byte_identical(tmp_path):
    frame = pd.DataFrame({'slot': [1, 2], 'power_w': [1.0 / 3.0, 2.5e-7]})
    first = write_outputs({"": frame}, str(tmp_path / "a"), "episode", 0, 1, 0.15)
    second = write_outputs({"": frame}, str(tmp_path / "b"), "episode", 0, 1, 0.15)
    with open(first[0], 'rb') as f1, open(second[0], 'rb') as f2:
        assert f1.read() == f2.read()
    assert pd.read_csv(first[0])['power_w'].tolist() == pytest.approx([1.0 / 3.0, 2.5e-7], rel=1e-11)


def test_writer_tracks_files(tmp_path):
    writer = OutputWriter(str(tmp_path), "episode", 5, 1, 0.15)
    writer.table(pd.DataFrame({'x': [1]}))
    writer.grid(np.ones((1, 2)), [40.0, 50.0], [3.0], kind="sensing")
    summary_path = writer.summary({'average_power_w': np.float64(1.5), 'slots': np.int64(3),
                                   'posterior_trace': np.array([0.1, 0.2])})
    assert len(writer.written) == 3
    assert writer.written[1].endswith("episode_sensing_seed5_g1-1_g2-0.15.csv")
    loaded = toml.load(summary_path)['summary']
    assert loaded['average_power_w'] == 1.5
    assert loaded['slots'] == 3
    assert loaded['posterior_trace'] == [0.1, 0.2]
