// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Python bindings. Values cross the boundary as plain lists, dicts and
// strings; config documents are passed as JSON text.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "mrl/diagnostics.hpp"
#include "mrl/errors.hpp"
#include "mrl/experiment.hpp"
#include "mrl/grpo.hpp"
#include "mrl/oracle.hpp"
#include "mrl/regimes.hpp"
#include "mrl/textgrid.hpp"
#include "mrl/thl.hpp"

namespace py = pybind11;
using namespace mrl;

namespace {

textgrid::TokenizerSpec make_spec(
    const std::string& id, const std::string& mode,
    const std::vector<std::pair<std::string, std::string>>& merges,
    std::size_t chunk_size) {
  textgrid::TokenizerSpec s;
  s.id = id;
  s.mode = textgrid::parse_tokenizer_mode(mode);
  s.merge_rules = merges;
  s.chunk_size = chunk_size;
  textgrid::validate(s);
  return s;
}

thl::Trace make_trace(const std::vector<double>& log_probs, const std::string& id) {
  thl::Trace t;
  t.log_probs = log_probs;
  t.response_mask.assign(log_probs.size(), true);
  t.tokenizer_id = id;
  return t;
}

harness::ExperimentConfig config_from(const std::string& json_text) {
  return harness::parse_config(nlohmann::json::parse(json_text));
}

py::dict row_dict(const harness::MetricsRow& m) {
  py::dict d;
  d["step"] = m.step;
  d["policy_id"] = m.policy_id;
  d["regime"] = m.regime;
  d["train_reward_mean"] = m.train_reward_mean;
  d["val_success_rate"] =
      m.val_success_rate ? py::cast(*m.val_success_rate) : py::none();
  d["entropy"] = m.entropy;
  d["kl_to_reference"] = m.kl_to_reference;
  d["clip_rate"] = m.clip_rate;
  d["gate_rate"] = m.gate_rate;
  d["pool_unusable_count"] = m.pool_unusable_count;
  d["aux_sequence_count"] = m.aux_sequence_count;
  return d;
}

}  // namespace

PYBIND11_MODULE(_mrl, m) {
  m.doc() = "Tabular multi-policy RL toolkit";

  py::register_exception<Error>(m, "MrlError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<textgrid::TokenizerSpec>(m, "TokenizerSpec")
      .def(py::init(&make_spec), py::arg("id"), py::arg("mode") = "whitespace-subword",
           py::arg("merges") = std::vector<std::pair<std::string, std::string>>{},
           py::arg("chunk_size") = 1)
      .def_readonly("id", &textgrid::TokenizerSpec::id)
      .def_property_readonly("mode", [](const textgrid::TokenizerSpec& s) {
        return textgrid::to_string(s.mode);
      });

  m.def(
      "word_spans",
      [](const std::string& text, const std::string& script) {
        std::vector<std::pair<std::size_t, std::size_t>> out;
        for (const auto& s : textgrid::word_spans(text, textgrid::parse_script_mode(script)))
          out.emplace_back(s.start, s.end);
        return out;
      },
      py::arg("text"), py::arg("script") = "auto");

  m.def("tokenize", [](const textgrid::TokenizerSpec& spec, const std::string& text) {
    std::vector<std::string> out;
    for (const auto& t : textgrid::tokenize(spec, text).tokens) out.push_back(t.text);
    return out;
  });

  m.def(
      "word_align_log_probs",
      [](const std::string& text, const std::vector<double>& log_probs,
         const textgrid::TokenizerSpec& src, const textgrid::TokenizerSpec& tgt) {
        const std::vector<bool> mask(textgrid::tokenize(tgt, text).size(), true);
        return thl::word_align_log_probs(text, make_trace(log_probs, src.id), src, tgt,
                                         mask)
            .values;
      },
      py::arg("text"), py::arg("log_probs"), py::arg("src"), py::arg("tgt"));

  m.def(
      "residual_report",
      [](const std::string& text, const std::vector<double>& log_probs,
         const textgrid::TokenizerSpec& src, const textgrid::TokenizerSpec& tgt,
         double clip_bound) {
        const std::vector<bool> mask(textgrid::tokenize(tgt, text).size(), true);
        const auto r = thl::residual_report(text, make_trace(log_probs, src.id), src,
                                            tgt, mask, clip_bound);
        py::dict d;
        d["residual"] = r.residual;
        d["mismatch_count"] = r.mismatch_count;
        d["bound"] = r.bound;
        d["source_total"] = r.source_total;
        d["aligned_total"] = r.aligned_total;
        return d;
      },
      py::arg("text"), py::arg("log_probs"), py::arg("src"), py::arg("tgt"),
      py::arg("clip_bound") = thl::kDefaultClipBound);

  m.def(
      "group_advantages",
      [](const std::vector<double>& rewards, const std::string& mode, double eps) {
        return grpo::group_advantages(rewards, grpo::parse_normalization(mode), eps)
            .values;
      },
      py::arg("rewards"), py::arg("mode") = "z-norm", py::arg("epsilon") = 1e-8);

  m.def("gate_probability", &oracle::gate_probability, py::arg("p_n"),
        py::arg("peer_ps"), py::arg("k"));
  m.def("gate_probability_enumerated", &oracle::gate_probability_enumerated,
        py::arg("p_n"), py::arg("peer_ps"), py::arg("k"));
  m.def("sgt_cost_bound", &regimes::sgt_cost_bound, py::arg("num_policies"),
        py::arg("k"));

  m.def("anti_align", [](double eta) {
    const auto a = oracle::anti_align_instance(eta);
    py::dict d;
    d["dot"] = a.dot;
    d["polynomial"] = a.polynomial;
    d["chi2"] = a.chi2;
    return d;
  });

  m.def(
      "oracle_suite",
      [](std::uint64_t seed) {
        py::list out;
        for (const auto& r : oracle::run_suite(seed)) {
          py::dict d;
          d["name"] = r.name;
          d["value"] = r.value;
          d["expected"] = r.expected;
          d["pass"] = r.pass;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 7);

  m.def(
      "run_experiment",
      [](const std::string& config_json, std::optional<std::string> run_dir,
         std::optional<std::size_t> workers) {
        harness::RunOptions opts;
        opts.run_dir = std::move(run_dir);
        opts.workers = workers;
        harness::RunResult res;
        {
          py::gil_scoped_release release;
          res = harness::run_experiment(config_from(config_json), opts);
        }
        py::list rows;
        for (const auto& r : res.metrics) rows.append(row_dict(r));
        py::dict d;
        d["metrics"] = rows;
        d["metrics_jsonl"] = res.metrics_jsonl();
        return d;
      },
      py::arg("config_json"), py::arg("run_dir") = py::none(),
      py::arg("workers") = py::none());

  m.def(
      "report",
      [](const std::string& run_dir, const std::string& table) {
        const auto run = harness::load_run_dir(run_dir);
        const harness::RunView view(run);
        const auto rep = harness::build_report(view, table);
        py::dict d;
        d["csv"] = rep.table.to_csv();
        d["ok"] = rep.ok();
        return d;
      },
      py::arg("run_dir"), py::arg("table"));

  m.def("diagnose_thl", [](const std::string& config_json) {
    const auto diag = harness::diagnose_thl(config_from(config_json));
    py::dict d;
    d["csv"] = diag.table.to_csv();
    bool ok = true;
    for (const auto& c : diag.checks) ok = ok && c.pass;
    d["ok"] = ok;
    return d;
  });

  m.attr("REPORT_TABLES") = harness::kReportTables;
}
