// Python bindings for the main operations: network construction, forward
// evaluation, cost audits, budget restriction, interruptible streaming,
// training, evaluation, checkpoints, and the gradient battery.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "anynet/checkpoint.hpp"
#include "anynet/flops.hpp"
#include "anynet/gradcheck.hpp"
#include "anynet/runner.hpp"
#include "anynet/train.hpp"

namespace py = pybind11;
using namespace anynet;

namespace {

using Net = AnytimeNetwork<double>;
using Stream = InterruptibleStream<double>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor<double> tensor_from_numpy(const DoubleArray& arr) {
  Shape shape(static_cast<std::size_t>(arr.ndim()));
  for (py::ssize_t i = 0; i < arr.ndim(); ++i)
    shape[static_cast<std::size_t>(i)] = static_cast<int>(arr.shape(i));
  std::vector<double> vals(arr.data(), arr.data() + arr.size());
  return Tensor<double>::from_data(std::move(shape), std::move(vals));
}

py::array numpy_from_tensor(const Tensor<double>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

py::array numpy_from_matrix(const std::vector<std::vector<double>>& m) {
  const py::ssize_t rows = static_cast<py::ssize_t>(m.size());
  const py::ssize_t cols = rows ? static_cast<py::ssize_t>(m[0].size()) : 0;
  py::array_t<double> out({rows, cols});
  auto view = out.mutable_unchecked<2>();
  for (py::ssize_t i = 0; i < rows; ++i)
    for (py::ssize_t j = 0; j < cols; ++j)
      view(i, j) = m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return out;
}

Mode mode_of(bool train) { return train ? Mode::Train : Mode::Eval; }

struct PyStep {
  int k = 0;
  std::vector<py::array> logits;
  std::uint64_t step_units = 0;
  std::uint64_t total_units = 0;
};

PyStep convert_step(Stream::Step step) {
  PyStep out;
  out.k = step.k;
  for (const auto& t : step.logits) out.logits.push_back(numpy_from_tensor(t));
  out.step_units = step.step_units;
  out.total_units = step.total_units;
  return out;
}

}  // namespace

PYBIND11_MODULE(_anynet, m) {
  m.doc() = "Anytime image classifiers built from nested thin sub-networks";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const UsageError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const BudgetError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const DataError& e) {
      PyErr_SetString(PyExc_OSError, e.what());
    } catch (const FormatError& e) {
      PyErr_SetString(PyExc_OSError, e.what());
    } catch (const Error& e) {
      PyErr_SetString(PyExc_RuntimeError, e.what());
    }
  });

  py::class_<ArchConfig>(m, "ArchConfig")
      .def(py::init([](const std::string& family, int blocks, int width, int bottleneck,
                       int subnetworks, std::optional<int> cardinality, int scales,
                       int classes, std::vector<int> level_classes, bool shared_bn) {
             ArchConfig cfg;
             cfg.family = family_from_string(family);
             cfg.blocks = blocks;
             cfg.width = width;
             cfg.bottleneck = bottleneck;
             cfg.subnetworks = subnetworks;
             cfg.cardinality = cardinality;
             cfg.scales = scales;
             cfg.classes = classes;
             cfg.level_classes = std::move(level_classes);
             cfg.shared_bn = shared_bn;
             cfg.validate();
             return cfg;
           }),
           py::arg("family"), py::arg("blocks") = 3, py::arg("width") = 64,
           py::arg("bottleneck") = 4, py::arg("subnetworks") = 1,
           py::arg("cardinality") = std::nullopt, py::arg("scales") = 3,
           py::arg("classes") = 10, py::arg("level_classes") = std::vector<int>{},
           py::arg("shared_bn") = false)
      .def_property(
          "family", [](const ArchConfig& c) { return family_to_string(c.family); },
          [](ArchConfig& c, const std::string& s) { c.family = family_from_string(s); })
      .def_readwrite("blocks", &ArchConfig::blocks)
      .def_readwrite("width", &ArchConfig::width)
      .def_readwrite("bottleneck", &ArchConfig::bottleneck)
      .def_readwrite("subnetworks", &ArchConfig::subnetworks)
      .def_readwrite("cardinality", &ArchConfig::cardinality)
      .def_readwrite("scales", &ArchConfig::scales)
      .def_readwrite("classes", &ArchConfig::classes)
      .def_readwrite("level_classes", &ArchConfig::level_classes)
      .def_readwrite("shared_bn", &ArchConfig::shared_bn)
      .def("validate", &ArchConfig::validate)
      .def("resolved_cardinality", &ArchConfig::resolved_cardinality)
      .def("levels", &ArchConfig::levels)
      .def("depth", &ArchConfig::depth)
      .def("__repr__", [](const ArchConfig& c) {
        return "<ArchConfig " + family_to_string(c.family) + " L=" +
               std::to_string(c.blocks) + " W=" + std::to_string(c.width) + " K=" +
               std::to_string(c.subnetworks) + ">";
      });

  py::class_<Net>(m, "Network")
      .def_property_readonly("config", [](const Net& n) { return n.cfg; })
      .def_property_readonly("cardinality", [](const Net& n) { return n.C; })
      .def("parameter_count", &Net::parameter_count)
      .def(
          "forward",
          [](Net& net, const DoubleArray& x, int k, int level, bool train) {
            return numpy_from_tensor(forward(net, tensor_from_numpy(x), k, mode_of(train), level));
          },
          py::arg("x"), py::arg("k"), py::arg("level") = 1, py::arg("train") = false)
      .def(
          "forward_all",
          [](Net& net, const DoubleArray& x, bool train) {
            auto outs = forward_all(net, tensor_from_numpy(x), mode_of(train));
            std::vector<std::vector<py::array>> res;
            for (auto& per_k : outs) {
              std::vector<py::array> row;
              for (auto& t : per_k) row.push_back(numpy_from_tensor(t));
              res.push_back(std::move(row));
            }
            return res;
          },
          py::arg("x"), py::arg("train") = false)
      .def(
          "features",
          [](Net& net, const DoubleArray& x, int k, bool train) {
            return numpy_from_tensor(features(net, tensor_from_numpy(x), k, mode_of(train)));
          },
          py::arg("x"), py::arg("k"), py::arg("train") = false)
      .def(
          "classify",
          [](Net& net, const DoubleArray& x, int k, int level) {
            return classify(net, tensor_from_numpy(x), k, level);
          },
          py::arg("x"), py::arg("k"), py::arg("level") = 1)
      .def("__repr__", [](const Net& n) {
        return "<Network " + family_to_string(n.cfg.family) + " depth=" +
               std::to_string(n.cfg.depth()) + " K=" + std::to_string(n.cfg.subnetworks) +
               ">";
      });

  m.def(
      "build_network",
      [](const ArchConfig& cfg, std::uint64_t seed) { return build_network<double>(cfg, seed); },
      py::arg("config"), py::arg("seed") = 1);
  m.def(
      "build_shallow_exit_variant",
      [](const ArchConfig& base, std::uint64_t seed) {
        return build_shallow_exit_variant<double>(base, seed);
      },
      py::arg("base"), py::arg("seed") = 1);

  // ---- cost audit ----------------------------------------------------------
  py::class_<SubnetworkAudit>(m, "SubnetworkAudit")
      .def_readonly("k", &SubnetworkAudit::k)
      .def_readonly("total", &SubnetworkAudit::total)
      .def_readonly("head_units", &SubnetworkAudit::head_units)
      .def_readonly("params", &SubnetworkAudit::params);

  py::class_<FlopsReport>(m, "FlopsReport")
      .def_readonly("family", &FlopsReport::family)
      .def_readonly("image_size", &FlopsReport::image_size)
      .def("at", &FlopsReport::at, py::arg("k"), py::return_value_policy::reference_internal)
      .def_property_readonly("totals",
                             [](const FlopsReport& r) {
                               std::vector<std::uint64_t> out;
                               for (const auto& s : r.subnetworks) out.push_back(s.total);
                               return out;
                             })
      .def("csv", &FlopsReport::csv)
      .def("table", &FlopsReport::table)
      .def("layer_table", &FlopsReport::layer_table, py::arg("k"));

  m.def(
      "count_flops",
      [](const ArchConfig& cfg, int k, int image_size) { return count_flops(cfg, k, image_size); },
      py::arg("config"), py::arg("k"), py::arg("image_size") = 0);
  m.def("count_params", &count_params, py::arg("config"), py::arg("k"));
  m.def("audit_network", &audit_network, py::arg("config"), py::arg("image_size") = 0);
  m.def(
      "verify_sparsity",
      [](Net& net) {
        std::vector<std::string> out;
        for (const auto& v : verify_sparsity(net))
          out.push_back("block " + std::to_string(v.block) + ": " + v.message);
        return out;
      },
      py::arg("network"), "Structural nesting violations; empty means the invariant holds");
  m.def("restrict_to_budget", &restrict_to_budget, py::arg("report"), py::arg("budget_units"),
        "Widest sub-network whose cost fits the budget (ValueError below the cheapest)");

  // ---- interruptible streaming ----------------------------------------------
  py::class_<PyStep>(m, "StreamStep")
      .def_readonly("k", &PyStep::k)
      .def_readonly("logits", &PyStep::logits)
      .def_readonly("step_units", &PyStep::step_units)
      .def_readonly("total_units", &PyStep::total_units);

  py::class_<Stream>(m, "InterruptibleStream")
      .def(py::init([](Net& net, const DoubleArray& x) {
             return new Stream(net, tensor_from_numpy(x));
           }),
           py::arg("network"), py::arg("x"), py::keep_alive<1, 2>())
      .def_property_readonly("total_steps", &Stream::total_steps)
      .def_property_readonly("completed", &Stream::completed)
      .def_property_readonly("done", &Stream::done)
      .def_property_readonly("total_units", &Stream::total_units)
      .def("advance", [](Stream& s) { return convert_step(s.advance()); })
      .def("__iter__", [](Stream& s) -> Stream& { return s; },
           py::return_value_policy::reference_internal)
      .def("__next__", [](Stream& s) {
        if (s.done()) throw py::stop_iteration();
        return convert_step(s.advance());
      });

  // ---- data -------------------------------------------------------------------
  py::class_<LabelHierarchy>(m, "LabelHierarchy")
      .def_readonly("levels", &LabelHierarchy::levels)
      .def_readonly("level_classes", &LabelHierarchy::level_classes)
      .def("project", &LabelHierarchy::project, py::arg("fine"));

  py::class_<Dataset>(m, "Dataset")
      .def("__len__", &Dataset::size)
      .def_readonly("image_size", &Dataset::image_size)
      .def_readonly("classes", &Dataset::classes)
      .def_property_readonly("hierarchy", [](const Dataset& d) { return d.hierarchy; })
      .def("label", [](const Dataset& d, int i) { return d.samples.at(static_cast<std::size_t>(i)).label; },
           py::arg("i"))
      .def("level_labels",
           [](const Dataset& d, int i) {
             const auto& s = d.samples.at(static_cast<std::size_t>(i));
             return s.level_labels.empty() ? std::vector<int>{s.label} : s.level_labels;
           },
           py::arg("i"));

  m.def("synth_dataset", &synth_dataset, py::arg("seed"), py::arg("n"), py::arg("classes"),
        py::arg("image_size"), py::arg("noise") = 0.1, py::arg("coarse_groups") = 0);
  m.def("load_cifar_binary",
        py::overload_cast<const std::string&, int>(&load_cifar_binary), py::arg("path"),
        py::arg("variant"));
  m.def("write_cifar_binary", &write_cifar_binary, py::arg("dataset"), py::arg("path"));
  m.def("load_taxonomy", &load_taxonomy, py::arg("path"));
  m.def("attach_hierarchy", &attach_hierarchy, py::arg("dataset"), py::arg("hierarchy"));
  m.def("split_indices", &split_indices, py::arg("n"), py::arg("held_out"), py::arg("seed"));

  // ---- training / evaluation ---------------------------------------------------
  py::class_<LogRow>(m, "LogRow")
      .def_readonly("epoch", &LogRow::epoch)
      .def_readonly("k", &LogRow::k)
      .def_readonly("level", &LogRow::level)
      .def_readonly("split", &LogRow::split)
      .def_readonly("error", &LogRow::error)
      .def_readonly("loss", &LogRow::loss)
      .def_readonly("lr", &LogRow::lr);

  py::class_<TrainLog>(m, "TrainLog")
      .def_readonly("family", &TrainLog::family)
      .def_readonly("seed", &TrainLog::seed)
      .def_readonly("rows", &TrainLog::rows)
      .def("csv", &TrainLog::csv)
      .def("last", &TrainLog::last, py::arg("k"), py::arg("level"), py::arg("split"));

  m.def(
      "train_joint",
      [](Net& net, const Dataset& ds, const std::vector<int>& train_idx,
         const std::vector<int>& val_idx, int epochs, int batch_size, double base_lr,
         double momentum, double weight_decay, std::uint64_t seed, bool augment) {
        TrainConfig tc;
        tc.epochs = epochs;
        tc.batch_size = batch_size;
        tc.base_lr = base_lr;
        tc.momentum = momentum;
        tc.weight_decay = weight_decay;
        tc.seed = seed;
        tc.augment = augment;
        return train_joint(net, ds, train_idx, val_idx, tc);
      },
      py::arg("network"), py::arg("dataset"), py::arg("train_idx"), py::arg("val_idx"),
      py::arg("epochs") = 20, py::arg("batch_size") = 32, py::arg("base_lr") = 0.1,
      py::arg("momentum") = 0.9, py::arg("weight_decay") = 1e-4, py::arg("seed") = 1,
      py::arg("augment") = true);

  m.def(
      "evaluate",
      [](Net& net, const Dataset& ds, const std::vector<int>& indices, int batch_size) {
        EvalResult r = evaluate(net, ds, indices, batch_size);
        return py::make_tuple(numpy_from_matrix(r.error), numpy_from_matrix(r.loss));
      },
      py::arg("network"), py::arg("dataset"), py::arg("indices"), py::arg("batch_size") = 64,
      "Per-(sub-network, level) top-1 error and mean loss matrices, shape (K, levels)");

  // ---- checkpoints ---------------------------------------------------------------
  m.def(
      "save_checkpoint",
      [](Net& net, const std::string& config_text, const std::string& path) {
        save_checkpoint(net, config_text, path);
      },
      py::arg("network"), py::arg("config_text"), py::arg("path"));
  m.def(
      "load_checkpoint",
      [](Net& net, const std::string& path) { load_checkpoint(net, path); },
      py::arg("network"), py::arg("path"));
  m.def("checkpoint_config_text", &checkpoint_config_text, py::arg("path"));

  // ---- gradient battery ------------------------------------------------------------
  m.def(
      "gradient_battery",
      [](std::uint64_t seed) {
        py::list out;
        for (const auto& c : gradient_battery(seed))
          out.append(py::make_tuple(c.name, c.result.max_rel_error, c.result.coords_checked));
        return out;
      },
      py::arg("seed") = 1,
      "Finite-difference sweep; list of (name, max_rel_error, coords_checked)");
}
