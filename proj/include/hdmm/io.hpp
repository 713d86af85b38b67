// Copyright 2026 The HDMM Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <fstream>
#include <sstream>

#include "json.hpp"

#include "hdmm/mechanism.hpp"

namespace hdmm {

using Json = nlohmann::json;

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw InputError("'" + path + "': " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << text;
}

inline Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json r = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline Matrix matrix_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.empty() || !j[0].is_array() || j[0].empty())
    throw InputError(where + ": expected a non-empty array of rows");
  const std::size_t cols = j[0].size();
  Matrix m(j.size(), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw InputError(where + ": ragged matrix");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[r][c].is_number()) throw InputError(where + ": non-numeric entry");
      double v = j[r][c].get<double>();
      if (!std::isfinite(v)) throw InputError(where + ": non-finite entry");
      m(r, c) = v;
    }
  }
  return m;
}

inline Vector vector_from_json(const Json& j, const std::string& where) {
  if (!j.is_array()) throw InputError(where + ": expected an array");
  Vector v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw InputError(where + ": non-numeric entry");
    v(i) = j[i].get<double>();
  }
  return v;
}

inline std::vector<int> domain_from_json(const Json& j) {
  if (!j.is_array() || j.empty()) throw InputError("'domain' must be a non-empty array");
  std::vector<int> d;
  for (const auto& n : j) {
    if (!n.is_number_integer() || n.get<long long>() < 1)
      throw InputError("'domain' entries must be positive integers");
    d.push_back(n.get<int>());
  }
  return d;
}

// ---------------------------------------------------------------------------
// Workloads.

inline Block block_from_json(const Json& j, const std::string& where) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "identity") return Block::identity();
    if (s == "total") return Block::total();
    if (s == "prefix") return Block::prefix();
    if (s == "allrange") return Block::all_range();
    throw InputError(where + ": unknown block '" + s + "'");
  }
  if (j.is_object() && j.size() == 1) {
    if (j.contains("width")) {
      if (!j["width"].is_number_integer() || j["width"].get<long long>() < 1)
        throw InputError(where + ": width must be a positive integer");
      return Block::width_range(j["width"].get<int>());
    }
    if (j.contains("permuted")) {
      const Json& p = j["permuted"];
      if (!p.is_object() || !p.contains("inner") || !p.contains("seed") || !p["seed"].is_number_unsigned())
        throw InputError(where + ": permuted needs 'inner' and a non-negative integer 'seed'");
      return Block::permuted(block_from_json(p["inner"], where), p["seed"].get<std::uint64_t>());
    }
    if (j.contains("literal")) return Block::from_matrix(matrix_from_json(j["literal"], where));
  }
  throw InputError(where + ": unrecognized block " + j.dump());
}

// Accepts the block-level spec ({"terms":[{"blocks":...}]}, optional
// "marginals") and the compiled form ({"terms":[{"factors":...}]}).
inline ImplicitWorkload workload_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("domain")) throw InputError("workload needs a 'domain'");
  ImplicitWorkload w;
  w.domain = domain_from_json(j["domain"]);
  const int d = w.dims();
  if (j.contains("terms")) {
    if (!j["terms"].is_array()) throw InputError("'terms' must be an array");
    for (std::size_t t = 0; t < j["terms"].size(); ++t) {
      const Json& tj = j["terms"][t];
      const std::string where = "term " + std::to_string(t);
      KronTerm term;
      term.weight = tj.value("weight", 1.0);
      if (tj.contains("blocks")) {
        const Json& bs = tj["blocks"];
        if (!bs.is_array() || static_cast<int>(bs.size()) != d)
          throw InputError(where + ": expected " + std::to_string(d) + " blocks");
        Product p{term.weight, {}};
        for (std::size_t i = 0; i < bs.size(); ++i)
          p.blocks.push_back(block_from_json(bs[i], where + ", block " + std::to_string(i)));
        try {
          for (std::size_t i = 0; i < bs.size(); ++i)
            term.factors.push_back(materialize_block(p.blocks[i], w.domain[i]));
        } catch (const InputError& e) {
          throw InputError(where + ": " + e.what());
        }
      } else if (tj.contains("factors")) {
        const Json& fs = tj["factors"];
        if (!fs.is_array() || static_cast<int>(fs.size()) != d)
          throw InputError(where + ": expected " + std::to_string(d) + " factors");
        for (std::size_t i = 0; i < fs.size(); ++i)
          term.factors.push_back(matrix_from_json(fs[i], where + ", factor " + std::to_string(i)));
      } else {
        throw InputError(where + ": needs 'blocks' or 'factors'");
      }
      w.terms.push_back(std::move(term));
    }
  }
  if (j.contains("marginals")) {
    // Per-mask query weights; bit d-1-i set means attribute i is kept.
    const Json& mj = j["marginals"];
    if (!mj.is_object() || !mj.contains("weights")) throw InputError("'marginals' needs 'weights'");
    check_marginal_dims(w.domain);
    Vector wt = vector_from_json(mj["weights"], "marginals.weights");
    if (wt.size() != (Eigen::Index{1} << d))
      throw InputError("marginals.weights must have 2^d entries");
    for (Eigen::Index a = 0; a < wt.size(); ++a) {
      if (wt(a) == 0.0) continue;
      KronTerm term;
      term.weight = wt(a);
      term.factors = marginal_factors(w.domain, static_cast<std::size_t>(a), false);
      w.terms.push_back(std::move(term));
    }
  }
  if (w.terms.empty()) throw InputError("workload has no terms");
  w.validate();
  return w;
}

inline ImplicitWorkload load_workload(const std::string& path) {
  return workload_from_json(read_json_file(path));
}

inline Json workload_to_json(const ImplicitWorkload& w) {
  Json terms = Json::array();
  for (const auto& t : w.terms) {
    Json fs = Json::array();
    for (const auto& f : t.factors) fs.push_back(matrix_to_json(f));
    terms.push_back({{"weight", t.weight}, {"factors", fs}});
  }
  return {{"domain", w.domain}, {"terms", terms}};
}

// ---------------------------------------------------------------------------
// Strategies.

inline Json kron_to_json(const std::vector<Matrix>& fs) {
  Json out = Json::array();
  for (const auto& f : fs) out.push_back(matrix_to_json(f));
  return out;
}

inline std::vector<Matrix> kron_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw InputError(where + ": expected a list of factors");
  std::vector<Matrix> fs;
  for (std::size_t i = 0; i < j.size(); ++i)
    fs.push_back(matrix_from_json(j[i], where + ", factor " + std::to_string(i)));
  return fs;
}

inline Json strategy_to_json(const Strategy& s) {
  Json variant;
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ExplicitStrategy>) {
          variant["explicit"] = matrix_to_json(v.a);
        } else if constexpr (std::is_same_v<T, KronStrategy>) {
          variant["kron"] = kron_to_json(v.factors);
        } else if constexpr (std::is_same_v<T, UnionKronStrategy>) {
          Json groups = Json::array();
          for (const auto& g : v.groups)
            groups.push_back({{"share", g.share}, {"kron", kron_to_json(g.factors)}, {"terms", g.terms}});
          variant["union"] = groups;
        } else {
          std::vector<double> th(v.theta.weights.data(), v.theta.weights.data() + v.theta.weights.size());
          variant["marginal"] = {{"domain", v.theta.domain}, {"theta", th}};
        }
      },
      s.variant);
  return {{"norm", norm_name(s.norm)},
          {"variant", variant},
          {"unit_error", s.unit_error},
          {"provenance",
           {{"operator", s.provenance.op}, {"seed", s.provenance.seed}, {"restarts", s.provenance.restarts}}}};
}

inline Strategy strategy_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("norm") || !j.contains("variant"))
    throw InputError("strategy needs 'norm' and 'variant'");
  Strategy s;
  const std::string norm = j["norm"].is_string() ? j["norm"].get<std::string>() : "";
  if (norm == "L1")
    s.norm = Norm::L1;
  else if (norm == "L2")
    s.norm = Norm::L2;
  else
    throw InputError("strategy norm must be \"L1\" or \"L2\"");
  const Json& v = j["variant"];
  if (!v.is_object() || v.size() != 1) throw InputError("strategy variant must name exactly one kind");
  if (v.contains("explicit")) {
    s.variant = ExplicitStrategy{matrix_from_json(v["explicit"], "explicit strategy")};
  } else if (v.contains("kron")) {
    s.variant = KronStrategy{kron_from_json(v["kron"], "kron strategy")};
  } else if (v.contains("union")) {
    UnionKronStrategy u;
    if (!v["union"].is_array() || v["union"].empty()) throw InputError("union strategy needs groups");
    for (std::size_t g = 0; g < v["union"].size(); ++g) {
      const Json& gj = v["union"][g];
      const std::string where = "union group " + std::to_string(g);
      UnionGroup grp;
      grp.share = gj.value("share", 0.0);
      if (!(grp.share > 0.0)) throw InputError(where + ": share must be positive");
      grp.factors = kron_from_json(gj.value("kron", Json()), where);
      if (gj.contains("terms"))
        grp.terms = gj["terms"].get<std::vector<int>>();
      else
        grp.terms = {static_cast<int>(g)};
      u.groups.push_back(std::move(grp));
    }
    s.variant = std::move(u);
  } else if (v.contains("marginal")) {
    const Json& m = v["marginal"];
    if (!m.contains("domain") || !m.contains("theta"))
      throw InputError("marginal strategy needs 'domain' and 'theta'");
    MarginalVector th{domain_from_json(m["domain"]), vector_from_json(m["theta"], "marginal theta")};
    check_marginal_dims(th.domain);
    if (th.weights.size() != static_cast<Eigen::Index>(th.masks()))
      throw InputError("marginal theta must have 2^d entries");
    if ((th.weights.array() < 0.0).any()) throw InputError("marginal theta must be nonnegative");
    s.variant = MarginalStrategy{std::move(th)};
  } else {
    throw InputError("unknown strategy variant");
  }
  s.unit_error = j.value("unit_error", 0.0);
  if (j.contains("provenance")) {
    const Json& p = j["provenance"];
    s.provenance.op = p.value("operator", "");
    s.provenance.seed = p.value("seed", std::uint64_t{0});
    s.provenance.restarts = p.value("restarts", 0);
  }
  return s;
}

inline std::string strategy_text(const Strategy& s) { return strategy_to_json(s).dump(1) + "\n"; }

inline Strategy load_strategy(const std::string& path) { return strategy_from_json(read_json_file(path)); }

// ---------------------------------------------------------------------------
// Domain configuration and answers.

inline DomainConfig domain_config_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("attributes") || !j["attributes"].is_array())
    throw InputError("domain config needs an 'attributes' array");
  DomainConfig cfg;
  for (const auto& aj : j["attributes"]) {
    Attribute a;
    if (!aj.contains("name") || !aj["name"].is_string()) throw InputError("attribute needs a 'name'");
    a.name = aj["name"].get<std::string>();
    if (aj.contains("values")) {
      for (const auto& v : aj["values"]) a.values.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    }
    if (aj.contains("edges")) {
      for (const auto& e : aj["edges"]) {
        if (!e.is_number()) throw InputError("attribute '" + a.name + "': edges must be numbers");
        a.edges.push_back(e.get<double>());
      }
    }
    cfg.attributes.push_back(std::move(a));
  }
  cfg.validate();
  return cfg;
}

inline std::string answers_csv(const std::vector<Vector>& answers) {
  std::ostringstream os;
  os.precision(17);
  os << "term_index,row_index,answer\n";
  for (std::size_t t = 0; t < answers.size(); ++t)
    for (Eigen::Index r = 0; r < answers[t].size(); ++r) os << t << ',' << r << ',' << answers[t](r) << '\n';
  return os.str();
}

}  // namespace hdmm
