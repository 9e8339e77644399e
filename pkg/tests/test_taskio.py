import os

import numpy as np
import pytest

from protoadapt.adapt import KMeansMode, seeded_kmeans
from protoadapt.embedding import init_model, mlp_forward
from protoadapt.errors import LabelsUnavailableError, TaskFormatError
from protoadapt.sinegen import SineGenConfig, sample_sine_task
from protoadapt.taskio import (
    export_embeddings,
    read_task_file,
    require_unlabeled_truth,
    write_task_file,
)

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


def make_tasks(count=3, sizes=(2, 3, 4), seed=0):
    cfg = SineGenConfig(seed=seed)
    return [sample_sine_task(cfg, sizes, i) for i in range(count)]


class TestRoundTrip:
    def test_write_read_is_value_exact(self, tmp_path):
        tasks = make_tasks()
        path = str(tmp_path / "tasks.tsv")
        write_task_file(tasks, path, seed=17)
        loaded, header = read_task_file(path)
        assert header.task_count == len(tasks) and header.seed == 17
        for a, b in zip(tasks, loaded):
            assert a.task_id == b.task_id
            np.testing.assert_array_equal(a.support_x, b.support_x)
            np.testing.assert_array_equal(a.unlabeled_x, b.unlabeled_x)
            np.testing.assert_array_equal(a.query_x, b.query_x)
            np.testing.assert_array_equal(a.support_y, b.support_y)
            np.testing.assert_array_equal(a.unlabeled_y, b.unlabeled_y)
            np.testing.assert_array_equal(a.query_y, b.query_y)

    def test_awkward_floats_survive(self, tmp_path):
        tasks = make_tasks(count=1)
        tasks[0].support_x[0, 0] = 0.1 + 0.2
        tasks[0].support_x[0, 1] = -1.7976931348623157e308
        tasks[0].query_x[0, 0] = 5e-324
        path = str(tmp_path / "tasks.tsv")
        write_task_file(tasks, path)
        loaded, _ = read_task_file(path)
        np.testing.assert_array_equal(tasks[0].support_x, loaded[0].support_x)
        np.testing.assert_array_equal(tasks[0].query_x, loaded[0].query_x)

    def test_golden_fixture(self):
        tasks, header = read_task_file(os.path.join(DATA_DIR, "golden_tasks.tsv"))
        assert header.seed == 7 and header.task_count == 1
        task = tasks[0]
        np.testing.assert_array_equal(task.support_x, [[0.5, 2.25], [-1.5, -3.5]])
        np.testing.assert_array_equal(task.support_y, [0, 1])
        np.testing.assert_array_equal(task.unlabeled_x, [[1.0, 2.625], [-2.0, -1.75]])
        np.testing.assert_array_equal(task.query_x, [[0.25, 1.9375], [2.0, -2.125]])
        np.testing.assert_array_equal(task.query_y, [0, 1])


class TestWriteErrors:
    def test_empty_task_list(self, tmp_path):
        with pytest.raises(TaskFormatError):
            write_task_file([], str(tmp_path / "x.tsv"))

    def test_heterogeneous_tasks(self, tmp_path):
        mixed = make_tasks(1, sizes=(2, 3, 4)) + make_tasks(1, sizes=(3, 3, 4))
        with pytest.raises(TaskFormatError):
            write_task_file(mixed, str(tmp_path / "x.tsv"))


class TestReadErrors:
    def write_lines(self, tmp_path, lines):
        path = str(tmp_path / "broken.tsv")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        return path

    def test_bad_magic(self, tmp_path):
        path = self.write_lines(tmp_path, ["WRONG\t1\t2\t2\t1\t0\t1\t1\t0"])
        with pytest.raises(TaskFormatError) as excinfo:
            read_task_file(path)
        assert excinfo.value.line == 1

    def test_unknown_version(self, tmp_path):
        path = self.write_lines(tmp_path, ["PADAPT-TASKS\t99\t2\t2\t1\t0\t1\t1\t0"])
        with pytest.raises(TaskFormatError, match="version"):
            read_task_file(path)

    def test_truncated_names_line(self, tmp_path):
        tasks = make_tasks(1)
        full = str(tmp_path / "full.tsv")
        write_task_file(tasks, full)
        lines = open(full).read().splitlines()
        path = self.write_lines(tmp_path, lines[:-3])
        with pytest.raises(TaskFormatError) as excinfo:
            read_task_file(path)
        assert excinfo.value.line == len(lines) - 2

    def test_field_count_mismatch_names_line(self, tmp_path):
        tasks = make_tasks(1)
        full = str(tmp_path / "full.tsv")
        write_task_file(tasks, full)
        lines = open(full).read().splitlines()
        lines[4] = lines[4] + "\t1.0"
        path = self.write_lines(tmp_path, lines)
        with pytest.raises(TaskFormatError) as excinfo:
            read_task_file(path)
        assert excinfo.value.line == 5

    def test_label_out_of_range(self, tmp_path):
        tasks = make_tasks(1)
        full = str(tmp_path / "full.tsv")
        write_task_file(tasks, full)
        lines = open(full).read().splitlines()
        parts = lines[1].split("\t")
        parts[2] = "7"
        lines[1] = "\t".join(parts)
        with pytest.raises(TaskFormatError, match="label"):
            read_task_file(self.write_lines(tmp_path, lines))

    def test_non_numeric_feature(self, tmp_path):
        tasks = make_tasks(1)
        full = str(tmp_path / "full.tsv")
        write_task_file(tasks, full)
        lines = open(full).read().splitlines()
        parts = lines[2].split("\t")
        parts[3] = "abc"
        lines[2] = "\t".join(parts)
        with pytest.raises(TaskFormatError) as excinfo:
            read_task_file(self.write_lines(tmp_path, lines))
        assert excinfo.value.line == 3


class TestMaskedLabels:
    def test_masked_export_hides_unlabeled_truth(self, tmp_path):
        tasks = make_tasks(1)
        path = str(tmp_path / "masked.tsv")
        write_task_file(tasks, path, mask_unlabeled=True)
        loaded, _ = read_task_file(path)
        assert np.all(loaded[0].unlabeled_y == -1)
        np.testing.assert_array_equal(loaded[0].support_y, tasks[0].support_y)
        with pytest.raises(LabelsUnavailableError):
            require_unlabeled_truth(loaded[0], "oracle labeling")


class TestExportEmbeddings:
    def test_zero_weight_model_exports_zero_features(self, tmp_path):
        model = init_model([2, 4, 3], seed=0)
        for i, w in enumerate(model.weights):
            model.weights[i] = np.zeros_like(w)
        tasks = make_tasks(1)
        path = str(tmp_path / "emb.tsv")
        export_embeddings(model, tasks, path)
        loaded, header = read_task_file(path)
        assert header.input_dim == 3
        assert np.all(loaded[0].support_x == 0.0)

    def test_round_trip_preserves_ids_roles_labels(self, tmp_path, quick_model):
        tasks = make_tasks(2)
        path = str(tmp_path / "emb.tsv")
        export_embeddings(quick_model, tasks, path)
        loaded, _ = read_task_file(path)
        for a, b in zip(tasks, loaded):
            assert a.task_id == b.task_id
            np.testing.assert_array_equal(a.support_y, b.support_y)
            np.testing.assert_array_equal(a.unlabeled_y, b.unlabeled_y)
            np.testing.assert_array_equal(a.query_y, b.query_y)

    def test_exported_adaptation_matches_in_memory(self, tmp_path, quick_model):
        tasks = make_tasks(3, sizes=(3, 5, 4))
        path = str(tmp_path / "emb.tsv")
        export_embeddings(quick_model, tasks, path)
        loaded, _ = read_task_file(path)
        for raw, emb in zip(tasks, loaded):
            direct = seeded_kmeans(
                mlp_forward(quick_model, raw.support_x), raw.support_y,
                mlp_forward(quick_model, raw.unlabeled_x), KMeansMode(),
            )
            via_file = seeded_kmeans(emb.support_x, emb.support_y, emb.unlabeled_x, KMeansMode())
            np.testing.assert_array_equal(direct.means, via_file.means)
            np.testing.assert_array_equal(direct.hard_assign, via_file.hard_assign)
            queries = mlp_forward(quick_model, raw.query_x)
            np.testing.assert_array_equal(direct.classify(queries), via_file.classify(emb.query_x))
