#include "locodec/config.hpp"
#include "locodec/decoders.hpp"
#include "locodec/dsp.hpp"
#include "locodec/error.hpp"
#include "locodec/pipeline.hpp"
#include "locodec/protocols.hpp"
#include "locodec/session.hpp"
#include "locodec/stats.hpp"
#include "locodec/synthetic.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace locodec;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vec(const Array& a) {
  if (a.ndim() != 1) throw ArgumentError("expected a 1-d array");
  return {a.data(), a.data() + a.size()};
}

Array to_array(const std::vector<double>& v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Array sos_array(const SosFilter& f) {
  Array out({static_cast<py::ssize_t>(f.sections.size()), py::ssize_t{6}});
  auto m = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < f.sections.size(); ++i) {
    const auto& s = f.sections[i];
    const double row[6] = {s.b0, s.b1, s.b2, 1.0, s.a1, s.a2};
    for (int j = 0; j < 6; ++j) m(static_cast<py::ssize_t>(i), j) = row[j];
  }
  return out;
}

SosFilter sos_from(const Array& a) {
  if (a.ndim() != 2 || a.shape(1) != 6) throw ArgumentError("sos must have shape (n, 6)");
  auto m = a.unchecked<2>();
  SosFilter f;
  for (py::ssize_t i = 0; i < a.shape(0); ++i) {
    if (m(i, 3) != 1.0) throw ArgumentError("sos rows must have a0 = 1");
    f.sections.push_back({m(i, 0), m(i, 1), m(i, 2), m(i, 4), m(i, 5)});
  }
  return f;
}

FilterKind parse_kind(const std::string& s) {
  if (s == "lowpass") return FilterKind::lowpass;
  if (s == "highpass") return FilterKind::highpass;
  if (s == "bandpass") return FilterKind::bandpass;
  throw ArgumentError("unknown filter kind '" + s + "'");
}

py::dict outcome_dict(const TestOutcome& t) {
  py::dict d;
  d["statistic"] = t.statistic;
  d["p_raw"] = t.p_raw;
  d["p_adjusted"] = t.p_adjusted;
  d["n"] = t.n;
  d["method"] = t.method;
  return d;
}

py::dict result_dict(const EvalResult& e) {
  py::dict d;
  d["session_id"] = e.session_id;
  d["rat_id"] = e.rat_id;
  d["strategy"] = std::string(to_string(e.strategy));
  d["region_set"] = e.region_set;
  d["band"] = e.band;
  d["offset_ms"] = e.offset_ms;
  d["model"] = e.model;
  d["r"] = e.r;
  d["r2"] = e.r2;
  d["n_test_windows"] = e.n_test_windows;
  d["seed"] = e.seed;
  return d;
}

FleetSpec fleet_from(const py::dict& kw) {
  FleetSpec f;
  for (auto [k, v] : kw) {
    const auto key = py::cast<std::string>(k);
    if (key == "rats") f.rats = py::cast<std::size_t>(v);
    else if (key == "sessions_per_rat") f.sessions_per_rat = py::cast<std::size_t>(v);
    else if (key == "samples") f.samples = py::cast<std::size_t>(v);
    else if (key == "channels") f.channels = py::cast<std::size_t>(v);
    else if (key == "law") f.law = parse_latent_law(py::cast<std::string>(v));
    else if (key == "noise") f.noise = py::cast<double>(v);
    else if (key == "linear_weight") f.linear_weight = py::cast<double>(v);
    else if (key == "permute_channels") f.permute_channels = py::cast<bool>(v);
    else if (key == "rescale_channels") f.rescale_channels = py::cast<bool>(v);
    else if (key == "lead_ms") f.lead_ms = py::cast<double>(v);
    else if (key == "signal_regions") f.signal_regions = RegionSet::parse(py::cast<std::string>(v)).regions;
    else if (key == "seed") f.seed = py::cast<std::uint64_t>(v);
    else throw ArgumentError("unknown fleet option '" + key + "'");
  }
  return f;
}

}  // namespace

PYBIND11_MODULE(_locodec, m) {
  m.doc() = "Continuous locomotion-speed decoding from EEG";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
#define LOCODEC_PY_ERROR(Name) py::register_exception<Name>(m, #Name, base.ptr());
  LOCODEC_PY_ERROR(FormatError)
  LOCODEC_PY_ERROR(IntegrityError)
  LOCODEC_PY_ERROR(ArgumentError)
  LOCODEC_PY_ERROR(ShapeError)
  LOCODEC_PY_ERROR(SplitError)
  LOCODEC_PY_ERROR(UnsupportedRateError)
  LOCODEC_PY_ERROR(DesignError)
  LOCODEC_PY_ERROR(UndefinedCorrelationError)
  LOCODEC_PY_ERROR(DegenerateDataError)
  LOCODEC_PY_ERROR(FitError)
  LOCODEC_PY_ERROR(DivergenceError)
  LOCODEC_PY_ERROR(LoadError)
  LOCODEC_PY_ERROR(SpecMismatchError)
  LOCODEC_PY_ERROR(PlanError)
  LOCODEC_PY_ERROR(ConfigError)
#undef LOCODEC_PY_ERROR

  py::class_<Session>(m, "Session")
      .def_readonly("id", &Session::id)
      .def_readonly("rat_id", &Session::rat_id)
      .def_readonly("sample_rate_hz", &Session::sample_rate_hz)
      .def_property_readonly("channels", &Session::channels)
      .def_property_readonly("samples", &Session::samples)
      .def_property_readonly("eeg",
                             [](const Session& s) {
                               Array out({static_cast<py::ssize_t>(s.eeg.rows), static_cast<py::ssize_t>(s.eeg.cols)});
                               std::copy(s.eeg.data.begin(), s.eeg.data.end(), out.mutable_data());
                               return out;
                             })
      .def_property_readonly("speed", [](const Session& s) { return to_array(s.speed); })
      .def_property_readonly("regions",
                             [](const Session& s) {
                               std::vector<std::string> out;
                               for (Region r : s.regions) out.emplace_back(to_string(r));
                               return out;
                             })
      .def("__repr__", [](const Session& s) {
        return "<Session " + s.id + " " + std::to_string(s.channels()) + "x" + std::to_string(s.samples()) + ">";
      });

  m.def("load_session", [](const std::filesystem::path& p, const std::string& format) {
    return ingest_session(p, parse_session_format(format));
  }, py::arg("path"), py::arg("format") = "canonical_csv");
  m.def("write_session", [](const Session& s, const std::filesystem::path& p, const std::string& format) {
    write_session(s, p, parse_session_format(format));
  }, py::arg("session"), py::arg("path"), py::arg("format") = "canonical_bin");
  m.def("synthetic_fleet", [](py::kwargs kw) { return generate_synthetic_fleet(fleet_from(kw)); });
  m.def("inclusion_gate", [](const std::vector<Session>& sessions, std::optional<double> threshold) {
    const auto g = apply_inclusion_gate(sessions, threshold);
    py::dict d;
    d["included"] = g.included;
    d["excluded"] = g.excluded;
    d["iqr"] = g.iqr;
    d["threshold"] = g.threshold;
    return d;
  }, py::arg("sessions"), py::arg("threshold") = py::none());

  m.def("butterworth", [](int order, const std::string& kind, std::vector<double> edges, double fs) {
    return sos_array(design_butterworth(order, parse_kind(kind), edges, fs));
  }, py::arg("order"), py::arg("kind"), py::arg("edges_hz"), py::arg("fs"));
  m.def("band_sos", [](const std::string& band, double fs) -> py::object {
    const auto f = band_filter(band_spec(parse_band(band)), fs);
    if (!f) return py::none();
    return sos_array(*f);
  }, py::arg("band"), py::arg("fs") = 100.0);
  m.def("sosfilt", [](const Array& sos, const Array& x) { return to_array(sosfilt(sos_from(sos), to_vec(x))); });
  m.def("filtfilt", [](const Array& sos, const Array& x) { return to_array(filtfilt(sos_from(sos), to_vec(x))); });
  m.def("welch_psd", [](const Array& x, double fs, std::size_t nfft, double overlap) {
    const auto p = welch_psd(to_vec(x), fs, nfft, overlap);
    return py::make_tuple(to_array(p.frequencies), to_array(p.power));
  }, py::arg("x"), py::arg("fs") = 100.0, py::arg("nfft") = 128, py::arg("overlap") = 0.5);
  m.def("autocorrelation", [](const Array& x, std::size_t max_lag) {
    return to_array(autocorrelation(to_vec(x), max_lag));
  });

  m.def("pearson_r", [](const Array& a, const Array& b) { return pearson_r(to_vec(a), to_vec(b)); });
  m.def("r_squared", [](const Array& p, const Array& a) { return r_squared(to_vec(p), to_vec(a)); });
  m.def("wilcoxon", [](const Array& a, const Array& b, const std::string& zeros, const std::string& method) {
    const ZeroMethod z = zeros == "pratt" ? ZeroMethod::pratt : ZeroMethod::wilcox;
    WilcoxonMethod wm = WilcoxonMethod::automatic;
    if (method == "exact") wm = WilcoxonMethod::exact;
    else if (method == "normal") wm = WilcoxonMethod::normal;
    return outcome_dict(wilcoxon_signed_rank(to_vec(a), to_vec(b), z, wm));
  }, py::arg("a"), py::arg("b"), py::arg("zero_method") = "wilcox", py::arg("method") = "auto");
  m.def("friedman", [](const std::vector<std::vector<double>>& rows) {
    PairedScores p;
    p.rows = rows;
    for (std::size_t j = 0; j < (rows.empty() ? 0 : rows[0].size()); ++j) p.variants.push_back("v" + std::to_string(j));
    return outcome_dict(friedman(p));
  });
  m.def("shapiro_wilk", [](const Array& x) { return outcome_dict(shapiro_wilk(to_vec(x))); });
  m.def("bonferroni", [](const std::vector<double>& p, std::size_t n) { return bonferroni(p, n); });
  m.def("bootstrap_median_ci", [](const Array& x, std::size_t n_boot, double level, std::uint64_t seed) {
    const auto ci = bootstrap_median_ci(to_vec(x), n_boot, level, seed);
    return py::make_tuple(ci.median, ci.lo, ci.hi);
  }, py::arg("x"), py::arg("n_boot") = 2000, py::arg("level") = 0.95, py::arg("seed") = 0);
  m.def("polyfit2", [](const Array& x, const Array& y) { return polyfit2(to_vec(x), to_vec(y)); });

  m.def("gradcheck", [](const std::string& family, std::size_t channels, std::size_t samples, std::uint64_t seed) {
    ad::GradcheckOptions opt;
    opt.samples = samples;
    opt.seed = seed;
    const auto rep = gradcheck_decoder(default_spec(parse_family(family), channels), 4, opt);
    return py::make_tuple(rep.worst, rep.entries.size());
  }, py::arg("family"), py::arg("channels") = 16, py::arg("samples") = 64, py::arg("seed") = 0);

  m.def("run_single_session", [](const Session& s, const std::string& family, const std::string& strategy,
                                 std::size_t max_epochs, std::uint64_t seed, const std::string& regions,
                                 const std::string& band, int offset_ms) {
    ExperimentPlan p;
    p.strategy = parse_strategy(strategy);
    p.decoder = default_spec(parse_family(family), s.channels());
    p.train.max_epochs = max_epochs;
    p.regions = RegionSet::parse(regions);
    p.band = parse_band(band);
    p.offset_ms = offset_ms;
    p.record_wall_time = false;
    py::gil_scoped_release release;
    return run_single_session(s, p, seed);
  }, py::arg("session"), py::arg("family") = "linear", py::arg("strategy") = "single_80",
     py::arg("max_epochs") = 30, py::arg("seed") = 0, py::arg("regions") = "all", py::arg("band") = "fullband",
     py::arg("offset_ms") = 0);

  py::class_<EvalResult>(m, "EvalResult")
      .def_readonly("session_id", &EvalResult::session_id)
      .def_readonly("r", &EvalResult::r)
      .def_readonly("r2", &EvalResult::r2)
      .def_readonly("n_test_windows", &EvalResult::n_test_windows)
      .def_readonly("seed", &EvalResult::seed)
      .def("as_dict", &result_dict);

  m.def("parse_config", [](const std::string& text) {
    const auto c = RunConfig::parse(text);
    return py::make_tuple(c.resolved(), c.hash());
  });
}
