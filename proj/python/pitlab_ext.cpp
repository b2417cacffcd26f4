// Python bindings: metrics, assignment, DSD rule, layer-wise loss, data and training.

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pitlab/harness.hpp"

namespace py = pybind11;
using namespace pitlab;

namespace {

LossMatrix to_matrix(const std::vector<std::vector<double>>& rows) {
    const std::size_t n = rows.size();
    std::vector<double> flat;
    flat.reserve(n * n);
    for (const auto& r : rows) {
        if (r.size() != n) throw Error("loss matrix must be square");
        flat.insert(flat.end(), r.begin(), r.end());
    }
    return LossMatrix(n, std::move(flat));
}

std::vector<std::vector<double>> to_rows(const LossMatrix& m) {
    std::vector<std::vector<double>> rows(m.size(), std::vector<double>(m.size()));
    for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = 0; j < m.size(); ++j) rows[i][j] = m(i, j);
    return rows;
}

py::dict assignment_dict(const AssignmentResult& r) {
    py::dict d;
    d["permutation"] = r.permutation.mapping();
    d["total_loss"] = r.total_loss;
    d["soft"] = r.soft;
    return d;
}

Metric parse_metric(const std::string& name) {
    if (name == "si_sdr") return Metric::si_sdr;
    if (name == "sdr") return Metric::sdr;
    throw ConfigError("metric must be 'si_sdr' or 'sdr'");
}

py::dict record_dict(const EpochRecord& r) {
    py::dict d;
    d["epoch"] = r.epoch;
    d["train_loss"] = r.train_loss;
    d["val_si_sdri"] = r.val_si_sdri;
    py::list sw;
    for (const auto& s : r.switching) sw.append(s ? py::cast(*s) : py::none());
    d["switching"] = sw;
    d["drop_rate"] = r.drop_rate;
    d["learning_rate"] = r.learning_rate;
    return d;
}

RunConfig config_from(const py::object& config) {
    if (config.is_none()) return RunConfig{};
    const std::string text = py::module_::import("json").attr("dumps")(config).cast<std::string>();
    return parse_run_config(nlohmann::json::parse(text));
}

py::object json_to_py(const nlohmann::json& j) {
    return py::module_::import("json").attr("loads")(j.dump());
}

py::dict run_dict(const RunResult& r) {
    py::dict d;
    py::list records;
    for (const auto& e : r.records) records.append(record_dict(e));
    d["records"] = records;
    d["report"] = json_to_py(r.report());
    return d;
}

}  // namespace

PYBIND11_MODULE(_pitlab, m) {
    m.doc() = "Permutation-invariant training lab";

    // Translators are tried newest first, so the derived type goes last.
    py::register_exception<Error>(m, "PitlabError", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

    m.def("si_sdr", [](const std::vector<double>& e, const std::vector<double>& t) {
        return si_sdr(Waveform(e), Waveform(t));
    }, py::arg("estimate"), py::arg("target"));
    m.def("sdr", [](const std::vector<double>& e, const std::vector<double>& t) {
        return sdr(Waveform(e), Waveform(t));
    }, py::arg("estimate"), py::arg("target"));
    m.def("metric_improvement",
          [](const std::vector<double>& e, const std::vector<double>& t, const std::vector<double>& mix,
             const std::string& metric) {
              return metric_improvement(Waveform(e), Waveform(t), Waveform(mix), parse_metric(metric));
          },
          py::arg("estimate"), py::arg("target"), py::arg("mixture"), py::arg("metric") = "si_sdr");
    m.def("pairwise_loss_matrix",
          [](const std::vector<std::vector<double>>& est, const std::vector<std::vector<double>>& tgt) {
              std::vector<Waveform> e, t;
              for (const auto& x : est) e.emplace_back(x);
              for (const auto& x : tgt) t.emplace_back(x);
              return to_rows(pairwise_loss_matrix(e, t));
          });

    m.def("pit_select", [](const std::vector<std::vector<double>>& m) { return assignment_dict(pit_select(to_matrix(m))); });
    m.def("exhaustive_select", [](const std::vector<std::vector<double>>& m) { return assignment_dict(exhaustive_select(to_matrix(m))); });
    m.def("hungarian_select", [](const std::vector<std::vector<double>>& m) { return assignment_dict(hungarian_select(to_matrix(m))); });
    m.def("fixed_assignment_loss", [](const std::vector<std::vector<double>>& m, const std::vector<int>& p) {
        return fixed_assignment_loss(to_matrix(m), Permutation(p)).total_loss;
    });
    m.def("sinkpit_loss",
          [](const std::vector<std::vector<double>>& m, double beta, int iterations) {
              const SinkPitResult r = sinkpit_loss(to_matrix(m), beta, iterations);
              return py::make_tuple(r.soft_loss, to_rows(r.plan.gamma));
          },
          py::arg("matrix"), py::arg("beta"), py::arg("iterations") = kDefaultSinkhornIterations);

    m.def("relaxed_better", &relaxed_better, py::arg("m_cur"), py::arg("m_best"), py::arg("epsilon"));

    m.def("default_weights", [](std::size_t n) { return default_weights(n).values(); });
    m.def("layerwise_loss",
          [](const std::vector<std::vector<std::vector<double>>>& layers, const std::vector<double>& weights) {
              std::vector<LossMatrix> mats;
              for (const auto& l : layers) mats.push_back(to_matrix(l));
              const LayerwiseResult r = layerwise_loss(mats, LayerWeights(weights));
              std::vector<std::vector<int>> perms;
              for (const auto& p : r.per_layer_assignments) perms.push_back(p.mapping());
              return py::make_tuple(r.loss, perms, r.per_layer_losses);
          });

    m.def("generate_sample",
          [](const py::object& config, std::uint64_t index) {
              const MixtureSample s = generate_sample(config_from(config).dataset, index);
              std::vector<std::vector<double>> targets;
              for (const auto& t : s.targets) targets.emplace_back(t.samples().begin(), t.samples().end());
              return py::make_tuple(std::vector<double>(s.mixture.samples().begin(), s.mixture.samples().end()),
                                    targets);
          },
          py::arg("config") = py::none(), py::arg("index") = 0);

    m.def("validate_config", [](const py::object& config) {
        const RunConfig c = config_from(config);
        c.validate();
        return json_to_py(to_json(c));
    }, py::arg("config") = py::none());

    m.def("train",
          [](const py::object& config, const std::function<void(py::dict)>& on_epoch) {
              const RunConfig c = config_from(config);
              EpochCallback cb;
              if (on_epoch) cb = [&on_epoch](const EpochRecord& r) { on_epoch(record_dict(r)); };
              return run_dict(train(c, cb));
          },
          py::arg("config") = py::none(), py::arg("on_epoch") = nullptr);
    m.def("run", [](const py::object& config) { return run_dict(run(config_from(config))); }, py::arg("config"));
    m.def("compare", [](const std::vector<std::string>& dirs) { return json_to_py(compare(dirs)); });
}
