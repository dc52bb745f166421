#include "triglab/probes.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "triglab/error.hpp"
#include "triglab/kernels.hpp"

namespace triglab {
namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

void check_data(const std::vector<std::vector<double>>& x, const std::vector<int>& y) {
  require(!x.empty() && x.size() == y.size(), "probe: need matching nonempty inputs and labels");
  for (const auto& r : x) require(r.size() == x.front().size(), "probe: ragged inputs");
  for (int l : y) require(l == 0 || l == 1, "probe: labels must be 0 or 1");
  const auto ones = std::count(y.begin(), y.end(), 1);
  require(ones > 0 && ones < static_cast<long>(y.size()), "probe: need both classes");
}

}  // namespace

double LinearProbe::predict(std::span<const double> x) const {
  require(x.size() == w.size(), "probe: input width mismatch");
  return sigmoid(dot(w, x) + b);
}

LinearProbe fit_logistic(const std::vector<std::vector<double>>& x, const std::vector<int>& y, double lambda,
                         std::size_t max_iter, double tol) {
  check_data(x, y);
  require(lambda > 0.0, "fit_logistic: regularization must be positive");
  const std::size_t n = x.size(), d = x.front().size();
  Eigen::MatrixXd X(n, d + 1);
  Eigen::VectorXd Y(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) X(i, j) = x[i][j];
    X(i, d) = 1.0;
    Y(i) = y[i];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  auto objective = [&](const Eigen::VectorXd& th) {
    const Eigen::VectorXd z = X * th;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += softplus(z(i)) - Y(i) * z(i);
    return s * inv_n + 0.5 * lambda * th.head(d).squaredNorm();
  };

  Eigen::VectorXd th = Eigen::VectorXd::Zero(d + 1);
  LinearProbe out;
  for (std::size_t it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd z = X * th;
    Eigen::VectorXd p(n), s(n);
    for (std::size_t i = 0; i < n; ++i) {
      p(i) = sigmoid(z(i));
      s(i) = p(i) * (1.0 - p(i));
    }
    Eigen::VectorXd g = X.transpose() * (p - Y) * inv_n;
    g.head(d) += lambda * th.head(d);
    out.grad_norm = g.norm();
    if (out.grad_norm < tol) {
      out.converged = true;
      break;
    }
    Eigen::MatrixXd H = X.transpose() * s.asDiagonal() * X * inv_n;
    H.diagonal().head(d).array() += lambda;
    H(d, d) += 1e-12;
    const Eigen::VectorXd step = -H.ldlt().solve(g);
    const double f0 = objective(th), slope = g.dot(step);
    double t = 1.0;
    while (t > 1e-10 && objective(th + t * step) > f0 + 1e-4 * t * slope) t *= 0.5;
    th += t * step;
    out.iterations = it + 1;
  }
  out.w.assign(th.data(), th.data() + d);
  out.b = th(d);
  return out;
}

double MlpProbe::predict(std::span<const double> x) const {
  require(x.size() == w1.rows(), "mlp probe: input width mismatch");
  double z = b2;
  for (std::size_t h = 0; h < w1.cols(); ++h) {
    double a = b1[h];
    for (std::size_t j = 0; j < x.size(); ++j) a += x[j] * w1(j, h);
    if (a > 0) z += a * w2[h];
  }
  return sigmoid(z);
}

MlpProbe fit_mlp_probe(const std::vector<std::vector<double>>& x, const std::vector<int>& y, double lambda,
                       const SeedKey& key, std::size_t hidden, std::size_t steps) {
  check_data(x, y);
  const std::size_t n = x.size(), d = x.front().size();
  double ms = 0.0;
  for (const auto& r : x)
    for (double v : r) ms += v * v;
  ms = std::sqrt(ms / static_cast<double>(n * d));
  const double in_scale = ms > 0 ? 1.0 / ms : 1.0;

  MlpProbe m;
  m.w1 = Tensor2(d, hidden);
  m.b1.assign(hidden, 0.0);
  m.w2.assign(hidden, 0.0);
  Rng rng(key);
  for (auto& v : m.w1.flat()) v = rng.normal() * in_scale / std::sqrt(static_cast<double>(d));
  for (auto& v : m.w2) v = rng.normal() / std::sqrt(static_cast<double>(hidden));

  // Adam over the flat parameter list [w1, b1, w2, b2].
  const std::size_t np = d * hidden + 2 * hidden + 1;
  std::vector<double> mo(np, 0.0), ve(np, 0.0), g(np);
  const double lr = 1e-2, b1c = 0.9, b2c = 0.999;
  double p1 = 1.0, p2 = 1.0;
  std::vector<double> act(hidden);
  for (std::size_t step = 0; step < steps; ++step) {
    std::fill(g.begin(), g.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double z = m.b2;
      for (std::size_t h = 0; h < hidden; ++h) {
        double a = m.b1[h];
        for (std::size_t j = 0; j < d; ++j) a += x[i][j] * m.w1(j, h);
        act[h] = a > 0 ? a : 0.0;
        z += act[h] * m.w2[h];
      }
      const double dz = (sigmoid(z) - y[i]) / static_cast<double>(n);
      g[np - 1] += dz;
      for (std::size_t h = 0; h < hidden; ++h) {
        g[d * hidden + hidden + h] += dz * act[h];
        if (act[h] <= 0) continue;
        const double da = dz * m.w2[h];
        g[d * hidden + h] += da;
        for (std::size_t j = 0; j < d; ++j) g[j * hidden + h] += da * x[i][j];
      }
    }
    for (std::size_t k = 0; k < d * hidden; ++k) g[k] += lambda * m.w1.flat()[k];
    for (std::size_t h = 0; h < hidden; ++h) g[d * hidden + hidden + h] += lambda * m.w2[h];
    p1 *= b1c;
    p2 *= b2c;
    auto param = [&](std::size_t k) -> double& {
      if (k < d * hidden) return m.w1.flat()[k];
      if (k < d * hidden + hidden) return m.b1[k - d * hidden];
      if (k < np - 1) return m.w2[k - d * hidden - hidden];
      return m.b2;
    };
    for (std::size_t k = 0; k < np; ++k) {
      mo[k] = b1c * mo[k] + (1 - b1c) * g[k];
      ve[k] = b2c * ve[k] + (1 - b2c) * g[k] * g[k];
      param(k) -= lr * (mo[k] / (1 - p1)) / (std::sqrt(ve[k] / (1 - p2)) + 1e-8);
    }
  }
  return m;
}

double ProbeModel::predict(std::size_t layer, std::span<const double> x) const {
  require(layer < n_layers(), "probe: layer out of range");
  return family == ProbeFamily::linear ? linear[layer].predict(x) : mlp[layer].predict(x);
}

std::vector<StimulusPair> natural_pairs(const LanguageSpec& spec, std::size_t n_pairs, const SeedKey& key,
                                        const StimulusOptions& opt) {
  auto e = build_stimuli(spec, n_pairs, StimulusCondition::clean, key, opt);
  auto f = build_stimuli(spec, n_pairs, StimulusCondition::natural_target, key, opt);
  std::vector<StimulusPair> out;
  for (std::size_t i = 0; i < n_pairs; ++i) out.emplace_back(std::move(e[i]), std::move(f[i]));
  return out;
}

std::vector<std::vector<std::vector<double>>> mlp_inputs_at_last(const ModelWeights& w,
                                                                 const std::vector<Stimulus>& stimuli) {
  std::vector<std::vector<std::vector<double>>> out(w.config.n_layers);
  for (const auto& s : stimuli) {
    const TraceCache c = forward(w, s.tokens);
    for (std::size_t l = 0; l < w.config.n_layers; ++l) {
      auto r = c.layers[l].resid_mid.row(c.seq_len() - 1);
      out[l].emplace_back(r.begin(), r.end());
    }
  }
  return out;
}

ProbeModel train_probes(const ModelWeights& w, const std::vector<StimulusPair>& pairs, double reg,
                        const SeedKey& key, ProbeFamily family) {
  require(pairs.size() >= 2, "train_probes: need at least 2 pairs");
  std::vector<Stimulus> stimuli;
  std::vector<int> labels;
  for (const auto& [e, f] : pairs) {
    require(!e.has_trigger() && !f.has_trigger(), "train_probes: probes train on natural stimuli only");
    stimuli.push_back(e);
    labels.push_back(0);
    stimuli.push_back(f);
    labels.push_back(1);
  }
  const auto feats = mlp_inputs_at_last(w, stimuli);
  ProbeModel pm;
  pm.family = family;
  pm.n_pairs = pairs.size();
  pm.reg = reg;
  for (std::size_t l = 0; l < feats.size(); ++l) {
    if (family == ProbeFamily::linear)
      pm.linear.push_back(fit_logistic(feats[l], labels, reg, pm.max_iter, pm.tol));
    else
      pm.mlp.push_back(fit_mlp_probe(feats[l], labels, reg, key.with("mlp_probe", l)));
  }
  return pm;
}

Trajectory trajectory(const ModelWeights& w, const ProbeModel& probes, const std::vector<Stimulus>& stimuli,
                      const std::string& condition) {
  require(probes.n_layers() == w.config.n_layers, "trajectory: probes were trained for a different model");
  const auto feats = mlp_inputs_at_last(w, stimuli);
  Trajectory t;
  t.condition = condition;
  for (std::size_t l = 0; l < feats.size(); ++l) {
    std::vector<double> ps;
    for (const auto& x : feats[l]) ps.push_back(probes.predict(l, x));
    double m = 0.0, v = 0.0;
    for (double p : ps) m += p;
    m /= static_cast<double>(ps.size());
    for (double p : ps) v += (p - m) * (p - m);
    t.mean.push_back(m);
    t.std.push_back(std::sqrt(v / static_cast<double>(ps.size())));
    t.p_french.push_back(std::move(ps));
  }
  return t;
}

LayerDirection direction_from_differences(std::vector<std::vector<double>> diffs) {
  require(diffs.size() >= 2, "natural_direction: need at least 2 pairs");
  const std::size_t d = diffs.front().size();
  LayerDirection out;
  std::vector<double> mean(d, 0.0);
  double avg_norm = 0.0;
  for (const auto& v : diffs) {
    require(v.size() == d, "natural_direction: ragged differences");
    add_inplace(std::span<double>(mean), v);
    avg_norm += l2_norm(v);
  }
  scale_inplace(mean, 1.0 / static_cast<double>(diffs.size()));
  avg_norm /= static_cast<double>(diffs.size());
  const double norm = l2_norm(mean);
  out.defined = norm > 1e-9 * std::max(1.0, avg_norm);
  if (out.defined) {
    scale_inplace(mean, 1.0 / norm);
    out.d_nat = std::move(mean);
  } else {
    out.d_nat.assign(d, 0.0);
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < diffs.size(); ++i)
    for (std::size_t j = i + 1; j < diffs.size(); ++j, ++count) {
      const double ni = l2_norm(diffs[i]), nj = l2_norm(diffs[j]);
      if (ni > 0 && nj > 0) sum += dot(diffs[i], diffs[j]) / (ni * nj);
    }
  out.self_consistency = sum / static_cast<double>(count);
  out.per_pair = std::move(diffs);
  return out;
}

DirectionSet natural_direction(const ModelWeights& w, const std::vector<StimulusPair>& pairs) {
  require(pairs.size() >= 2, "natural_direction: need at least 2 pairs");
  std::vector<Stimulus> es, fs;
  for (const auto& [e, f] : pairs) {
    es.push_back(e);
    fs.push_back(f);
  }
  const auto fe = mlp_inputs_at_last(w, es), ff = mlp_inputs_at_last(w, fs);
  DirectionSet ds;
  for (std::size_t l = 0; l < fe.size(); ++l) {
    std::vector<std::vector<double>> diffs;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      std::vector<double> v = ff[l][i];
      for (std::size_t j = 0; j < v.size(); ++j) v[j] -= fe[l][i][j];
      diffs.push_back(std::move(v));
    }
    ds.layers.push_back(direction_from_differences(std::move(diffs)));
  }
  return ds;
}

Projection project(std::span<const double> residual, std::span<const double> direction) {
  require(residual.size() == direction.size(), "project: width mismatch");
  require(std::abs(l2_norm(direction) - 1.0) <= 1e-9, "project: direction must be unit norm");
  Projection p;
  p.coefficient = dot(residual, direction);
  p.parallel.assign(direction.begin(), direction.end());
  scale_inplace(p.parallel, p.coefficient);
  return p;
}

nlohmann::json to_json(const ProbeModel& p) {
  nlohmann::json j;
  j["format"] = "triglab-probes";
  j["version"] = 1;
  j["family"] = p.family == ProbeFamily::linear ? "linear" : "mlp";
  j["n_pairs"] = p.n_pairs;
  j["reg"] = p.reg;
  j["max_iter"] = p.max_iter;
  j["tol"] = p.tol;
  nlohmann::json layers = nlohmann::json::array();
  if (p.family == ProbeFamily::linear) {
    for (const auto& lp : p.linear)
      layers.push_back({{"w", lp.w},
                        {"b", lp.b},
                        {"iterations", lp.iterations},
                        {"converged", lp.converged},
                        {"grad_norm", lp.grad_norm}});
  } else {
    for (const auto& mp : p.mlp)
      layers.push_back({{"rows", mp.w1.rows()},
                        {"cols", mp.w1.cols()},
                        {"w1", mp.w1.data()},
                        {"b1", mp.b1},
                        {"w2", mp.w2},
                        {"b2", mp.b2}});
  }
  j["layers"] = layers;
  return j;
}

ProbeModel probes_from_json(const nlohmann::json& j) {
  ProbeModel p;
  try {
    if (j.at("format") != "triglab-probes") throw ModelIoError("not a probe sidecar");
    p.family = j.at("family") == "linear" ? ProbeFamily::linear : ProbeFamily::mlp;
    p.n_pairs = j.at("n_pairs").get<std::size_t>();
    p.reg = j.at("reg").get<double>();
    p.max_iter = j.at("max_iter").get<std::size_t>();
    p.tol = j.at("tol").get<double>();
    for (const auto& l : j.at("layers")) {
      if (p.family == ProbeFamily::linear) {
        LinearProbe lp;
        lp.w = l.at("w").get<std::vector<double>>();
        lp.b = l.at("b").get<double>();
        lp.iterations = l.at("iterations").get<std::size_t>();
        lp.converged = l.at("converged").get<bool>();
        lp.grad_norm = l.at("grad_norm").get<double>();
        p.linear.push_back(std::move(lp));
      } else {
        MlpProbe mp;
        mp.w1 = Tensor2(l.at("rows").get<std::size_t>(), l.at("cols").get<std::size_t>(),
                        l.at("w1").get<std::vector<double>>());
        mp.b1 = l.at("b1").get<std::vector<double>>();
        mp.w2 = l.at("w2").get<std::vector<double>>();
        mp.b2 = l.at("b2").get<double>();
        p.mlp.push_back(std::move(mp));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ModelIoError(std::string("malformed probe sidecar: ") + e.what());
  }
  return p;
}

}  // namespace triglab
