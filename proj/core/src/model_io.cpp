#include "spinesim/model_io.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "spinesim/error.hpp"

namespace spinesim {

namespace {

using nlohmann::json;

const json& require(const json& j, const char* key) {
  if (!j.contains(key)) throw ModelError(key, "missing key");
  return j.at(key);
}

double number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ModelError(path, "expected a number");
  return j.get<double>();
}

int state_ref(const json& j, const std::vector<std::string>& labels, const std::string& path) {
  if (j.is_number_integer()) {
    const auto v = j.get<long long>();
    if (v < 1 || v > static_cast<long long>(labels.size())) throw ModelError(path, "unknown state");
    return static_cast<int>(v - 1);
  }
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == s) return static_cast<int>(i);
    throw ModelError(path, "unknown state '" + s + "'");
  }
  throw ModelError(path, "expected a state index or label");
}

}  // namespace

BranchingModel parse_model(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ModelError("", std::string("invalid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ModelError("", "expected a JSON object");

  std::vector<std::string> labels;
  const json& js = require(root, "states");
  if (js.is_number_integer()) {
    const auto d = js.get<long long>();
    if (d < 1) throw ModelError("states", "state count must be positive");
    for (long long i = 1; i <= d; ++i) labels.push_back(std::to_string(i));
  } else if (js.is_array()) {
    for (std::size_t i = 0; i < js.size(); ++i) {
      const std::string path = "states[" + std::to_string(i) + "]";
      if (js[i].is_string()) labels.push_back(js[i].get<std::string>());
      else if (js[i].is_number_integer()) labels.push_back(std::to_string(js[i].get<long long>()));
      else throw ModelError(path, "expected a label");
    }
    if (labels.empty()) throw ModelError("states", "empty state space");
  } else {
    throw ModelError("states", "expected a list or a count");
  }
  const int d = static_cast<int>(labels.size());

  const json& jq = require(root, "Q");
  if (!jq.is_array() || static_cast<int>(jq.size()) != d) throw ModelError("Q", "expected " + std::to_string(d) + " rows");
  Mat Q(d, d);
  for (int x = 0; x < d; ++x) {
    const std::string rp = "Q[" + std::to_string(x) + "]";
    if (!jq[x].is_array() || static_cast<int>(jq[x].size()) != d) throw ModelError(rp, "expected " + std::to_string(d) + " entries");
    for (int y = 0; y < d; ++y) Q(x, y) = number(jq[x][y], rp + "[" + std::to_string(y) + "]");
  }

  const json& jb = require(root, "beta");
  if (!jb.is_array() || static_cast<int>(jb.size()) != d) throw ModelError("beta", "expected " + std::to_string(d) + " entries");
  Vec beta(d);
  for (int x = 0; x < d; ++x) beta[x] = number(jb[x], "beta[" + std::to_string(x) + "]");

  const json& jo = require(root, "offspring");
  if (!jo.is_array() || static_cast<int>(jo.size()) != d) throw ModelError("offspring", "expected " + std::to_string(d) + " per-state lists");
  std::vector<std::vector<OffspringAtom>> offspring(d);
  for (int x = 0; x < d; ++x) {
    const std::string sp = "offspring[" + std::to_string(x) + "]";
    if (!jo[x].is_array()) throw ModelError(sp, "expected a list of atoms");
    for (std::size_t a = 0; a < jo[x].size(); ++a) {
      const std::string ap = sp + "[" + std::to_string(a) + "]";
      const json& ja = jo[x][a];
      if (!ja.is_object()) throw ModelError(ap, "expected {p, children}");
      if (!ja.contains("p")) throw ModelError(ap + ".p", "missing key");
      if (!ja.contains("children")) throw ModelError(ap + ".children", "missing key");
      OffspringAtom atom;
      atom.p = number(ja.at("p"), ap + ".p");
      const json& jc = ja.at("children");
      if (!jc.is_array()) throw ModelError(ap + ".children", "expected a list");
      for (std::size_t c = 0; c < jc.size(); ++c)
        atom.children.push_back(state_ref(jc[c], labels, ap + ".children[" + std::to_string(c) + "]"));
      offspring[x].push_back(std::move(atom));
    }
  }

  int n_max = kDefaultNMax;
  if (root.contains("n_max")) {
    if (!root["n_max"].is_number_integer()) throw ModelError("n_max", "expected an integer");
    n_max = root["n_max"].get<int>();
  }
  BranchingModel m = build_model(std::move(labels), std::move(Q), std::move(beta), std::move(offspring), n_max);
  if (root.contains("calibrate_critical")) {
    if (!root["calibrate_critical"].is_boolean()) throw ModelError("calibrate_critical", "expected a boolean");
    if (root["calibrate_critical"].get<bool>()) m = calibrate_critical(m);
  }
  return m;
}

BranchingModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("", "cannot open model file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_model(ss.str());
}

}  // namespace spinesim
