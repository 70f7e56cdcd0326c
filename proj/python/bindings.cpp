#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "nbl/activation_io.hpp"
#include "nbl/cca.hpp"
#include "nbl/costmodel.hpp"
#include "nbl/lmmse.hpp"
#include "nbl/ranking.hpp"
#include "nbl/stats.hpp"
#include "nbl/toymodel.hpp"

namespace py = pybind11;
using namespace nbl;

namespace {

void bind_io(py::module_& m) {
  py::enum_<io::Role>(m, "Role")
      .value("INPUT", io::Role::kInput)
      .value("OUTPUT", io::Role::kOutput);

  py::class_<io::DumpHeader>(m, "DumpHeader")
      .def(py::init<>())
      .def_readwrite("version", &io::DumpHeader::version)
      .def_readwrite("layer_index", &io::DumpHeader::layer_index)
      .def_readwrite("role", &io::DumpHeader::role)
      .def_readwrite("feature_dim", &io::DumpHeader::feature_dim)
      .def_readwrite("token_count", &io::DumpHeader::token_count);

  m.def("read_dump", [](const std::filesystem::path& path) {
        auto d = io::read_dump_file(path);
        return py::make_tuple(d.header, ActivationMatrix(std::move(d.matrix)));
      },
      py::arg("path"), "Returns (DumpHeader, float32 array of shape (h, N)).");
  m.def("write_dump",
        [](const std::filesystem::path& path, std::uint16_t layer, io::Role role,
           const ActivationMatrix& matrix) {
          io::DumpHeader h;
          h.layer_index = layer;
          h.role = role;
          h.feature_dim = static_cast<std::uint32_t>(matrix.rows());
          h.token_count = static_cast<std::uint64_t>(matrix.cols());
          io::write_dump_file(path, h, matrix);
        },
        py::arg("path"), py::arg("layer"), py::arg("role"), py::arg("matrix"));
  m.def("dump_filename", &io::dump_filename, py::arg("layer"), py::arg("role"));
}

void bind_stats(py::module_& m) {
  py::class_<Regularization>(m, "Regularization")
      .def(py::init<>())
      .def(py::init([](double ridge, double floor) { return Regularization{ridge, floor}; }),
           py::arg("ridge_rel"), py::arg("floor_rel"))
      .def_readwrite("ridge_rel", &Regularization::ridge_rel)
      .def_readwrite("floor_rel", &Regularization::floor_rel);

  py::class_<stats::CovarianceSet>(m, "CovarianceSet")
      .def_readonly("mean_x", &stats::CovarianceSet::mean_x)
      .def_readonly("mean_y", &stats::CovarianceSet::mean_y)
      .def_readonly("cxx", &stats::CovarianceSet::cxx)
      .def_readonly("cyy", &stats::CovarianceSet::cyy)
      .def_readonly("cyx", &stats::CovarianceSet::cyx)
      .def_readonly("sample_count", &stats::CovarianceSet::sample_count);

  py::class_<stats::MomentAccumulator>(m, "MomentAccumulator")
      .def(py::init<Eigen::Index, Eigen::Index>(), py::arg("h_in"), py::arg("h_out"))
      .def("accumulate",
           [](stats::MomentAccumulator& acc, const Matrix& x, const Matrix& y) {
             acc.accumulate_double(x, y);
           },
           py::arg("x"), py::arg("y"), "Columns are tokens.")
      .def("merge", &stats::MomentAccumulator::merge, py::arg("other"))
      .def("finalize", &stats::MomentAccumulator::finalize)
      .def_property_readonly("count", &stats::MomentAccumulator::count);

  m.def("covariance_set", [](const Matrix& x, const Matrix& y) {
        stats::MomentAccumulator acc(x.rows(), y.rows());
        acc.accumulate_double(x, y);
        return acc.finalize();
      },
      py::arg("x"), py::arg("y"));
  m.def("derive_residual_covset", &stats::derive_residual_covset, py::arg("cs"));
}

void bind_cca(py::module_& m) {
  m.def("standardized_cross_correlation", &cca::standardized_cross_correlation, py::arg("cs"),
        py::arg("reg") = Regularization{});
  m.def("canonical_correlations",
        [](const Matrix& cw) { return cca::canonical_correlations(cw).rho; }, py::arg("cw"));
  m.def("cca_nmse_bound",
        [](const stats::CovarianceSet& cs, const Regularization& reg) {
          return cca::cca_nmse_bound(
              cca::canonical_correlations(cca::standardized_cross_correlation(cs, reg)));
        },
        py::arg("cs"), py::arg("reg") = Regularization{});
  m.def("direct_nmse", &cca::direct_nmse, py::arg("cs"), py::arg("reg") = Regularization{});
  m.def("cosine_distance_score",
        py::overload_cast<const Matrix&, const Matrix&>(&cca::cosine_distance_score),
        py::arg("x"), py::arg("y"));
}

void bind_lmmse(py::module_& m) {
  py::class_<lmmse::LinearMap>(m, "LinearMap")
      .def_readonly("weight", &lmmse::LinearMap::weight)
      .def_readonly("bias", &lmmse::LinearMap::bias)
      .def_readonly("source_layer", &lmmse::LinearMap::source_layer)
      .def_readonly("fit_nmse", &lmmse::LinearMap::fit_nmse);

  m.def("fit_lmmse", &lmmse::fit_lmmse, py::arg("cs"), py::arg("layer") = 0,
        py::arg("reg") = Regularization{});
  m.def("apply", py::overload_cast<const lmmse::LinearMap&, const Matrix&>(&lmmse::apply),
        py::arg("map"), py::arg("x"));
  m.def("orthogonality_residual", &lmmse::orthogonality_residual, py::arg("cs"), py::arg("map"));
}

void bind_cost(py::module_& m) {
  py::class_<cost::InferenceProfile>(m, "InferenceProfile")
      .def(py::init<>())
      .def_readwrite("layers", &cost::InferenceProfile::layers)
      .def_readwrite("linearized", &cost::InferenceProfile::linearized)
      .def_readwrite("context", &cost::InferenceProfile::context)
      .def_readwrite("width", &cost::InferenceProfile::width)
      .def_readwrite("batch", &cost::InferenceProfile::batch)
      .def_readwrite("heads", &cost::InferenceProfile::heads)
      .def_readwrite("kv_groups", &cost::InferenceProfile::kv_groups)
      .def_readwrite("bytes_per_elem", &cost::InferenceProfile::bytes_per_elem);

  m.def("prefill_cost", &cost::prefill_cost, py::arg("profile"));
  m.def("prefill_speedup", &cost::prefill_speedup, py::arg("profile"));
  m.def("kv_cache_gib", &cost::kv_cache_gib, py::arg("profile"));
  m.def("kv_cache_table",
        [](const cost::InferenceProfile& base, const std::vector<std::uint64_t>& contexts,
           const std::vector<std::uint64_t>& linearized) {
          return cost::cache_table(cost::profile_grid(base, contexts, linearized)).gib;
        },
        py::arg("base"), py::arg("contexts"), py::arg("linearized"),
        "GiB per [context][linearized] cell.");
}

void bind_toy(py::module_& m) {
  py::class_<toy::ToyConfig>(m, "ToyConfig")
      .def(py::init<>())
      .def_readwrite("layers", &toy::ToyConfig::layers)
      .def_readwrite("width", &toy::ToyConfig::width)
      .def_readwrite("heads", &toy::ToyConfig::heads)
      .def_readwrite("kv_groups", &toy::ToyConfig::kv_groups)
      .def_readwrite("ffn_width", &toy::ToyConfig::ffn_width)
      .def_readwrite("vocab", &toy::ToyConfig::vocab)
      .def_readwrite("max_context", &toy::ToyConfig::max_context)
      .def_readwrite("seed", &toy::ToyConfig::seed)
      .def("validate", &toy::ToyConfig::validate);

  py::class_<toy::ToyTransformer>(m, "ToyTransformer")
      .def_property_readonly("config", &toy::ToyTransformer::config)
      .def("linearized_layers", &toy::ToyTransformer::linearized_layers)
      .def("logits",
           [](const toy::ToyTransformer& model, const std::vector<toy::TokenId>& tokens) {
             return model.forward(tokens).logits;
           },
           py::arg("tokens"))
      .def("capture",
           [](const toy::ToyTransformer& model, const std::vector<toy::TokenId>& tokens,
              LayerIndex layer) {
             auto fwd = model.forward(tokens, {layer});
             auto& cap = fwd.captures.at(layer);
             return py::make_tuple(Matrix(std::move(cap.input)), Matrix(std::move(cap.output)));
           },
           py::arg("tokens"), py::arg("layer"), "Returns (X, Y) for one attention layer.");

  m.def("init_random", &toy::init_random, py::arg("config"));
  m.def("load_model", &toy::load_model, py::arg("path"));
  m.def("save_model", &toy::save_model, py::arg("model"), py::arg("path"));
  m.def("substitute",
        [](const toy::ToyTransformer& model, const std::vector<LayerIndex>& layers,
           const std::vector<lmmse::LinearMap>& maps) {
          return toy::substitute(model, layers, maps);
        },
        py::arg("model"), py::arg("layers"), py::arg("maps"));
  m.def("logit_drift",
        [](const toy::ToyTransformer& a, const toy::ToyTransformer& b,
           const std::vector<toy::TokenId>& tokens) {
          const auto d = toy::logit_drift(a, b, tokens);
          return py::make_tuple(d.mean_kl, d.max_abs);
        },
        py::arg("a"), py::arg("b"), py::arg("tokens"), "Returns (mean_kl, max_abs).");
  m.def("perplexity",
        [](const toy::ToyTransformer& model, const std::vector<toy::TokenId>& tokens) {
          return toy::perplexity(model, tokens);
        },
        py::arg("model"), py::arg("tokens"));
  m.def("score_model",
        [](const toy::ToyTransformer& model, const std::vector<std::vector<toy::TokenId>>& seqs,
           const std::string& criterion) {
          std::vector<std::pair<LayerIndex, double>> out;
          for (const auto& s : ranking::score_model(model, seqs, ranking::parse_criterion(criterion))) {
            out.emplace_back(s.layer_index, s.score);
          }
          return out;
        },
        py::arg("model"), py::arg("sequences"), py::arg("criterion") = "cca_bound",
        "Returns [(layer, score)] for every attention layer.");
}

}  // namespace

PYBIND11_MODULE(_nbl, m) {
  m.doc() = "Attention-layer linearization: statistics, CCA bound, LMMSE maps, cost model";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_RuntimeError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  bind_io(m);
  bind_stats(m);
  bind_cca(m);
  bind_lmmse(m);
  bind_cost(m);
  bind_toy(m);
}
