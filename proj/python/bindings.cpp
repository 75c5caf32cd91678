#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "hagil/cli.hpp"
#include "hagil/features.hpp"
#include "hagil/gesture_data.hpp"
#include "hagil/harness.hpp"
#include "hagil/rehearsal.hpp"
#include "hagil/strategies.hpp"
#include "hagil/tinynet.hpp"

namespace py = pybind11;
using namespace hagil;

namespace {

using Rows = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

Rows landmarks_of(const HandFrame& f) {
    Rows r(kNumLandmarks, 3);
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        r(k, 0) = f.landmarks[i].x;
        r(k, 1) = f.landmarks[i].y;
        r(k, 2) = f.landmarks[i].z;
    }
    return r;
}

void set_landmarks(HandFrame& f, const Rows& r) {
    if (r.rows() != static_cast<Eigen::Index>(kNumLandmarks)) throw std::invalid_argument("expected a 21x3 array");
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        f.landmarks[i] = {r(k, 0), r(k, 1), r(k, 2)};
    }
}

std::vector<ClassData> class_data(const std::vector<std::pair<std::string, Matrix>>& classes) {
    std::vector<ClassData> out;
    for (const auto& [name, features] : classes) out.push_back({name, features});
    return out;
}

py::dict task_dict(const TaskRecord& t) {
    py::dict d;
    d["task"] = t.task;
    d["classes_learned"] = t.classes_learned;
    d["new_classes"] = t.new_classes;
    d["task_acc"] = t.task_acc;
    d["macro_acc"] = t.macro_acc;
    d["per_class_acc"] = t.per_class_acc;
    d["test_samples"] = t.test_samples;
    d["train_seconds"] = t.train_seconds;
    return d;
}

py::dict run_dict(const RunResult& r) {
    py::dict d;
    d["run"] = r.run;
    d["seed"] = r.seed;
    d["class_order"] = r.class_order;
    py::list tasks;
    for (const auto& t : r.tasks) tasks.append(task_dict(t));
    d["tasks"] = tasks;
    d["final_avg_acc"] = r.final_avg_acc;
    d["warnings"] = r.warnings;
    return d;
}

RunResult run_from_dict(const py::dict& d) {
    RunResult r;
    r.run = d["run"].cast<std::size_t>();
    r.final_avg_acc = d["final_avg_acc"].cast<double>();
    for (auto item : d["tasks"].cast<py::list>()) {
        const auto t = item.cast<py::dict>();
        TaskRecord rec;
        rec.task = t["task"].cast<int>();
        rec.classes_learned = t["classes_learned"].cast<std::size_t>();
        rec.task_acc = t["task_acc"].cast<double>();
        rec.macro_acc = t["macro_acc"].cast<double>();
        r.tasks.push_back(rec);
    }
    return r;
}

Scenario scenario_from(const std::string& json_text) {
    Scenario s = Scenario::from_json(nlohmann::json::parse(json_text));
    s.validate();
    return s;
}

}  // namespace

PYBIND11_MODULE(_hagil, m) {
    m.doc() = "Class-incremental hand-gesture learning";

    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);

    py::enum_<Handedness>(m, "Handedness").value("Left", Handedness::Left).value("Right", Handedness::Right);

    py::class_<HandFrame>(m, "HandFrame")
        .def(py::init<>())
        .def_property("landmarks", &landmarks_of, &set_landmarks, "21x3 array of (x, y, z)")
        .def_readwrite("handedness", &HandFrame::handedness)
        .def_readwrite("subject", &HandFrame::subject)
        .def_readwrite("label", &HandFrame::label)
        .def("__eq__", [](const HandFrame& a, const HandFrame& b) { return a == b; });

    m.def("validate_frame", &validate_frame);
    m.def("parse_frame_line", &parse_frame_line);
    m.def("format_frame_line", &format_frame_line);

    py::class_<GestureDataset>(m, "GestureDataset")
        .def(py::init<std::vector<HandFrame>>())
        .def_property_readonly("frames", &GestureDataset::frames)
        .def_property_readonly("classes", [](const GestureDataset& d) { return d.classes().names(); })
        .def_property_readonly("subjects", &GestureDataset::subjects)
        .def("__len__", &GestureDataset::size)
        .def("__eq__", [](const GestureDataset& a, const GestureDataset& b) { return a == b; });

    m.def("load_dataset", [](const std::filesystem::path& p, bool mirror_left) {
        return load_dataset(p, LoadOptions{mirror_left});
    }, py::arg("path"), py::arg("mirror_left") = false);
    m.def("save_dataset", &save_dataset, py::arg("dataset"), py::arg("path"));

    py::class_<SynthConfig>(m, "SynthConfig")
        .def(py::init<>())
        .def_readwrite("n_classes", &SynthConfig::n_classes)
        .def_readwrite("samples_per_class", &SynthConfig::samples_per_class)
        .def_readwrite("jitter_std", &SynthConfig::jitter_std)
        .def_readwrite("n_subjects", &SynthConfig::n_subjects)
        .def_readwrite("seed", &SynthConfig::seed);
    m.def("synth_gestures", &synth_gestures);

    py::enum_<Encoding>(m, "Encoding")
        .value("Raw2D", Encoding::Raw2D)
        .value("Raw3D", Encoding::Raw3D)
        .value("WristDiff", Encoding::WristDiff)
        .value("WristEuclidean", Encoding::WristEuclidean)
        .value("AllEuclidean", Encoding::AllEuclidean)
        .value("AllDiff", Encoding::AllDiff)
        .value("Combined", Encoding::Combined);
    m.def("encoding_dim", &encoding_dim);
    m.def("encoding_from_string", &encoding_from_string);
    m.def("encode", [](const HandFrame& f, Encoding e) {
        const auto v = encode(f, e).values;
        return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
    });
    m.def("encode_frames", [](const std::vector<HandFrame>& frames, Encoding e) {
        std::vector<const HandFrame*> ptrs;
        for (const auto& f : frames) ptrs.push_back(&f);
        return encode_frames(ptrs, e);
    });

    m.def("herd_select", &herd_select, py::arg("embeddings"), py::arg("m"));
    m.def("nem_classify", [](const Vector& query, const std::vector<std::pair<int, Vector>>& means) {
        std::vector<ClassMean> cm;
        for (const auto& [id, v] : means) cm.push_back({id, v, 1});
        const auto p = nem_classify(query, cm);
        return py::make_tuple(p.class_id, p.scores);
    }, py::arg("query"), py::arg("means"));
    m.def("il2m_rectify", [](const std::vector<double>& scores, const std::string& stats_json, int task) {
        return il2m_rectify(scores, Il2mStats::from_json(nlohmann::json::parse(stats_json)), task);
    });

    py::class_<MlpModel>(m, "MlpModel")
        .def(py::init([](std::size_t input_dim, std::size_t n_classes, std::vector<std::size_t> hidden,
                         double dropout_p, bool batch_norm, std::uint64_t seed) {
                 return MlpModel(Architecture{input_dim, std::move(hidden), dropout_p, batch_norm}, n_classes, seed);
             }),
             py::arg("input_dim"), py::arg("n_classes"), py::arg("hidden") = std::vector<std::size_t>{256, 128},
             py::arg("dropout_p") = 0.35, py::arg("batch_norm") = true, py::arg("seed") = 0)
        .def_property_readonly("input_dim", &MlpModel::input_dim)
        .def_property_readonly("n_classes", &MlpModel::n_classes)
        .def_property_readonly("hidden_widths", &MlpModel::hidden_widths)
        .def("predict", &MlpModel::predict)
        .def("embed", &MlpModel::embed, py::arg("batch"), py::arg("normalize") = true)
        .def("expand_head", &MlpModel::expand_head, py::arg("n_new"), py::arg("seed") = 0)
        .def("grad_check", [](const MlpModel& model, const Matrix& batch, const std::vector<int>& labels) {
            return grad_check(model, batch, labels);
        });
    m.def("softmax_rows", &softmax_rows, py::arg("logits"), py::arg("temperature") = 1.0);

    py::enum_<StrategyKind>(m, "Strategy")
        .value("Joint", StrategyKind::Joint)
        .value("FineTune", StrategyKind::FineTune)
        .value("LwF", StrategyKind::LwF)
        .value("ICaRL", StrategyKind::ICaRL)
        .value("IL2M", StrategyKind::IL2M);
    m.def("strategy_from_string", &strategy_from_string);

    py::class_<Learner>(m, "Learner")
        .def(py::init([](const std::string& config_json) {
                 return Learner(LearnerConfig::from_json(nlohmann::json::parse(config_json)));
             }),
             "Build from a learner configuration JSON document")
        .def_static("default_config_json", [] { return LearnerConfig{}.to_json().dump(); })
        .def("config_json", [](const Learner& l) { return l.config().to_json().dump(); })
        .def("learn_initial", [](Learner& l, const std::vector<std::pair<std::string, Matrix>>& classes) {
            py::gil_scoped_release release;
            l.learn_initial(class_data(classes));
        })
        .def("learn_increment", [](Learner& l, const std::vector<std::pair<std::string, Matrix>>& classes) {
            py::gil_scoped_release release;
            l.learn_increment(class_data(classes));
        })
        .def("classify", [](const Learner& l, const Vector& features) {
            const auto p = l.classify(std::span<const double>(features.data(), static_cast<std::size_t>(features.size())));
            return py::make_tuple(p.class_id, p.scores);
        })
        .def("classify_frame", [](const Learner& l, const HandFrame& f) { return l.classify(f).class_id; })
        .def("classify_batch", &Learner::classify_batch)
        .def_property_readonly("seen", [](const Learner& l) { return l.seen().names(); })
        .def_property_readonly("task", &Learner::task)
        .def_property_readonly("memory_size", [](const Learner& l) { return l.memory().size(); })
        .def_property_readonly("model", &Learner::model, py::return_value_policy::copy)
        .def("save", &Learner::save)
        .def_static("load", &Learner::load);

    m.def("run_scenario", [](const std::string& scenario_json, std::size_t run_index) {
        const Scenario s = scenario_from(scenario_json);
        RunResult r;
        {
            py::gil_scoped_release release;
            r = run_scenario(s, run_index);
        }
        return run_dict(r);
    }, py::arg("scenario_json"), py::arg("run_index") = 0);
    m.def("run_all", [](const std::string& scenario_json, std::size_t parallel) {
        const Scenario s = scenario_from(scenario_json);
        std::vector<RunResult> rs;
        {
            py::gil_scoped_release release;
            rs = run_all(s, parallel);
        }
        py::list out;
        for (const auto& r : rs) out.append(run_dict(r));
        return out;
    }, py::arg("scenario_json"), py::arg("parallel") = 1);
    m.def("aggregate", [](const py::list& runs) {
        std::vector<RunResult> rs;
        for (auto r : runs) rs.push_back(run_from_dict(r.cast<py::dict>()));
        return aggregate(rs).to_json().dump();
    }, "Summary of run dicts, as a JSON document");

    m.def("run_cli", [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
            py::gil_scoped_release release;
            code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
    });
}
