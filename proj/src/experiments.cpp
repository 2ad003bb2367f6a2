#include "flatness/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <random>
#include <sstream>
#include <tuple>

#include "flatness/checkpoint.hpp"
#include "flatness/errors.hpp"

namespace flatness {

using nlohmann::json;

namespace {

json power_json(const PowerConfig& p) {
  return {{"tol", p.tol}, {"max_iter", p.max_iter}, {"seed", p.seed}, {"project_horizontal", p.project_horizontal}};
}

json train_json(const TrainConfig& t) {
  json j = {{"optimizer", to_string(t.optimizer)},
            {"batch_size", t.batch_size},
            {"learning_rate", t.learning_rate},
            {"max_epochs", t.max_epochs},
            {"target_train_accuracy", t.target_train_accuracy},
            {"seed", t.seed}};
  j["target_loss"] = t.target_loss ? json(*t.target_loss) : json(nullptr);
  return j;
}

json spectral_json(const SpectralResult& r) {
  return {{"eigenvalue", r.eigenvalue}, {"iterations", r.iterations}, {"converged", r.converged}, {"trace", r.trace}};
}

std::string join(const std::vector<double>& v, char sep) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? std::string(1, sep) : "") << v[i];
  return os.str();
}

json summary_json(const Summary& s) { return {{"mean", s.mean}, {"stddev", s.stddev}, {"count", s.count}}; }

}  // namespace

// ---- invariance -----------------------------------------------------------

TrainConfig InvarianceConfig::default_train() {
  TrainConfig t;
  t.optimizer = Optimizer::Adam;
  t.batch_size = 50;
  t.learning_rate = 1e-3;
  t.max_epochs = 500;
  t.target_train_accuracy = 1.0;
  t.target_loss = 1e-2;
  return t;
}

json InvarianceReport::to_json() const {
  json rows_json = json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"lambda", r.lambda},
                         {"sigma", r.sigma},
                         {"relative_difference", r.relative_difference},
                         {"class_invariant_change", r.class_invariant_change},
                         {"spectral", spectral_json(r.spectral)}});
  }
  json lambdas = json::array();
  for (const auto& l : config.lambdas) lambdas.push_back(l);
  return {{"config",
           {{"arch", config.arch},
            {"with_bias", config.with_bias},
            {"lambdas", lambdas},
            {"seed", config.seed},
            {"samples", config.samples},
            {"features", config.features},
            {"classes", config.classes},
            {"train", train_json(config.train)},
            {"power", power_json(config.power)}}},
          {"train_loss", train_loss},
          {"train_accuracy", train_accuracy},
          {"epochs", epochs},
          {"base", spectral_json(base)},
          {"rows", rows_json}};
}

std::string InvarianceReport::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "lambda,sigma_base,sigma_transformed,relative_difference,iterations,converged\n";
  for (const auto& r : rows) {
    os << '"' << join(r.lambda, ';') << "\"," << base.eigenvalue << ',' << r.sigma << ',' << r.relative_difference
       << ',' << r.spectral.iterations << ',' << (r.spectral.converged ? "true" : "false") << '\n';
  }
  return os.str();
}

InvarianceReport run_invariance(const InvarianceConfig& cfg) {
  const NetworkSpec spec = preset(cfg.arch, cfg.with_bias);
  const NetworkGraph graph = build(spec);
  const std::size_t layers = graph.layers();
  std::vector<ScaleVector> scales;
  for (const auto& l : cfg.lambdas) {
    ScaleVector s(l);
    if (s.size() != layers) {
      throw ValidationError("lambda with " + std::to_string(s.size()) + " entries for a " + std::to_string(layers) +
                            "-layer network");
    }
    scales.push_back(std::move(s));
  }

  const Dataset data = gen_synthetic(cfg.samples, cfg.features, cfg.classes, cfg.seed);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  TrainResult trained = train(graph, init(spec, cfg.seed), data, tc);

  InvarianceReport rep;
  rep.config = cfg;
  rep.config.train = tc;
  rep.train_loss = trained.history.back().loss;
  rep.train_accuracy = trained.history.back().accuracy;
  rep.epochs = trained.history.back().epoch;
  rep.minimum = std::move(trained.point);

  const MetricMode mode = default_mode(rep.minimum);
  rep.base = riemannian_power_method(mode, graph, rep.minimum, data, cfg.power);
  const double invariant = class_invariant(mode, rep.minimum);
  for (std::size_t k = 0; k < scales.size(); ++k) {
    const ParamPoint moved = transform(rep.minimum, scales[k]);
    InvarianceRow row;
    row.lambda = scales[k].values();
    row.spectral = riemannian_power_method(mode, graph, moved, data, cfg.power);
    row.sigma = row.spectral.eigenvalue;
    row.relative_difference = relative_difference(rep.base.eigenvalue, row.sigma);
    row.class_invariant_change = std::abs(class_invariant(mode, moved) - invariant);
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

// ---- large batch vs small batch -------------------------------------------

Summary summarize(const std::vector<double>& values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

std::vector<BatchAggregate> aggregate(const std::vector<RunRecord>& records) {
  std::vector<BatchAggregate> out;
  std::vector<Index> batches;
  for (const auto& r : records)
    if (std::find(batches.begin(), batches.end(), r.batch_size) == batches.end()) batches.push_back(r.batch_size);
  for (Index b : batches) {
    std::vector<double> acc, riem, eucl;
    for (const auto& r : records) {
      if (r.batch_size != b || !r.error.empty()) continue;
      acc.push_back(r.test_accuracy);
      riem.push_back(r.riemannian_sigma);
      if (r.euclidean_sigma) eucl.push_back(*r.euclidean_sigma);
    }
    out.push_back({b, summarize(acc), summarize(riem), summarize(eucl)});
  }
  return out;
}

json LbsbReport::to_json() const {
  json recs = json::array();
  for (const auto& r : records) {
    json j = {{"seed", r.seed},
              {"batch_size", r.batch_size},
              {"learning_rate", r.learning_rate},
              {"epochs", r.epochs},
              {"reached_target", r.reached_target},
              {"train_loss", r.train_loss},
              {"train_accuracy", r.train_accuracy},
              {"test_accuracy", r.test_accuracy},
              {"riemannian_sigma", r.riemannian_sigma},
              {"riemannian_iterations", r.riemannian_iterations},
              {"riemannian_converged", r.riemannian_converged},
              {"euclidean_iterations", r.euclidean_iterations},
              {"checkpoint", r.checkpoint},
              {"error", r.error}};
    j["euclidean_sigma"] = r.euclidean_sigma ? json(*r.euclidean_sigma) : json(nullptr);
    recs.push_back(j);
  }
  json aggs = json::array();
  for (const auto& a : aggregates) {
    aggs.push_back({{"batch_size", a.batch_size},
                    {"test_accuracy", summary_json(a.test_accuracy)},
                    {"riemannian_sigma", summary_json(a.riemannian_sigma)},
                    {"euclidean_sigma", summary_json(a.euclidean_sigma)}});
  }
  return {{"config",
           {{"dataset", config.dataset},
            {"arch", config.arch},
            {"with_bias", config.with_bias},
            {"subset", config.subset},
            {"test_subset", config.test_subset},
            {"measure_samples", config.measure_samples},
            {"sb_batch", config.sb_batch},
            {"lb_batch", config.lb_batch},
            {"sb_lr", config.sb_lr},
            {"lb_lr", config.lb_lr},
            {"optimizer", to_string(config.optimizer)},
            {"max_epochs", config.max_epochs},
            {"target_train_accuracy", config.target_train_accuracy},
            {"seeds", config.seeds},
            {"power", power_json(config.power)},
            {"euclidean", config.euclidean}}},
          {"records", recs},
          {"aggregates", aggs}};
}

std::string LbsbReport::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "seed,batch_size,learning_rate,epochs,train_loss,train_accuracy,test_accuracy,riemannian_sigma,"
        "euclidean_sigma,riemannian_iterations,error\n";
  for (const auto& r : records) {
    os << r.seed << ',' << r.batch_size << ',' << r.learning_rate << ',' << r.epochs << ',' << r.train_loss << ','
       << r.train_accuracy << ',' << r.test_accuracy << ',' << r.riemannian_sigma << ',';
    if (r.euclidean_sigma) os << *r.euclidean_sigma;
    os << ',' << r.riemannian_iterations << ",\"" << r.error << "\"\n";
  }
  return os.str();
}

Split load_split(const LbsbConfig& cfg) {
  Split s;
  if (cfg.dataset == "mnist") {
    const std::filesystem::path dir(cfg.data_dir);
    s.train = load_mnist_idx((dir / "train-images-idx3-ubyte").string(), (dir / "train-labels-idx1-ubyte").string(),
                             cfg.subset);
    s.test = load_mnist_idx((dir / "t10k-images-idx3-ubyte").string(), (dir / "t10k-labels-idx1-ubyte").string(),
                            cfg.test_subset);
  } else if (cfg.dataset == "synthetic") {
    s.train = gen_synthetic(cfg.subset, 784, 10, 1);
    s.test = gen_synthetic(cfg.test_subset, 784, 10, 2);
  } else {
    throw ValidationError("unknown dataset '" + cfg.dataset + "'");
  }
  return s;
}

LbsbReport run_lbsb(const LbsbConfig& cfg) {
  const NetworkSpec spec = preset(cfg.arch, cfg.with_bias);
  const NetworkGraph graph = build(spec);
  const Split split = load_split(cfg);
  if (cfg.sb_batch > split.train.size() || cfg.lb_batch > split.train.size()) {
    throw ValidationError("batch sizes must not exceed the training set size");
  }
  const Dataset measure =
      split.train.slice(0, std::min(split.train.size(), std::max<Index>(1, cfg.measure_samples)));
  if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);

  LbsbReport rep;
  rep.config = cfg;
  for (std::uint64_t seed : cfg.seeds) {
    const ParamPoint start = init(spec, seed);
    for (const auto& [batch, lr, tag] :
         {std::tuple{cfg.sb_batch, cfg.sb_lr, "sb"}, std::tuple{cfg.lb_batch, cfg.lb_lr, "lb"}}) {
      RunRecord rec;
      rec.seed = seed;
      rec.batch_size = batch;
      rec.learning_rate = lr;
      try {
        TrainConfig tc;
        tc.optimizer = cfg.optimizer;
        tc.batch_size = batch;
        tc.learning_rate = lr;
        tc.max_epochs = cfg.max_epochs;
        tc.target_train_accuracy = cfg.target_train_accuracy;
        tc.seed = seed;
        const TrainResult tr = train(graph, start, split.train, tc);
        rec.epochs = tr.history.back().epoch;
        rec.reached_target = tr.reached_target;
        rec.train_loss = tr.history.back().loss;
        rec.train_accuracy = tr.history.back().accuracy;
        rec.test_accuracy = accuracy(graph, tr.point, split.test);
        if (!cfg.checkpoint_dir.empty()) {
          const std::string name = std::string(tag) + "_seed" + std::to_string(seed) + ".json";
          rec.checkpoint = (std::filesystem::path(cfg.checkpoint_dir) / name).string();
          checkpoint_save(rec.checkpoint, tr.point, spec, seed);
        }
        const SpectralResult rs = riemannian_power_method(default_mode(tr.point), graph, tr.point, measure, cfg.power);
        rec.riemannian_sigma = rs.eigenvalue;
        rec.riemannian_iterations = rs.iterations;
        rec.riemannian_converged = rs.converged;
        if (cfg.euclidean) {
          const SpectralResult es = euclidean_power_method(graph, tr.point, measure, cfg.power);
          rec.euclidean_sigma = es.eigenvalue;
          rec.euclidean_iterations = es.iterations;
        }
      } catch (const NumericalError& e) {
        rec.error = e.what();
      }
      rep.records.push_back(std::move(rec));
    }
  }
  rep.aggregates = aggregate(rep.records);
  return rep;
}

// ---- line plots -----------------------------------------------------------

TangentVector layer_normalized(const ParamPoint& point, const TangentVector& v) {
  require_congruent(point, v, "layer_normalized");
  TangentVector out = v;
  auto scale_block = [](Tensor& d, const Tensor& w) {
    const double dn = d.vec().norm();
    if (dn > 0.0) d.vec() *= w.vec().norm() / dn;
  };
  for (std::size_t i = 0; i < point.layers(); ++i) {
    scale_block(out.weights[i], point.weights[i]);
    if (point.has_bias()) scale_block(out.biases[i], point.biases[i]);
  }
  return out;
}

std::vector<LineplotRow> run_lineplot(const LossGraph& graph, const ParamPoint& a, const ParamPoint& b,
                                      const Dataset& data, const LineplotConfig& cfg) {
  if (!congruent(a, b)) throw ValidationError("line plot checkpoints do not share an architecture");
  if (cfg.directions < 1 || cfg.samples < 2) throw ValidationError("line plot needs >= 1 direction and >= 2 samples");
  graph.validate(a);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<LineplotRow> rows;
  for (int d = 0; d < cfg.directions; ++d) {
    TangentVector v = zero_tangent(a);
    for (auto& w : v.weights)
      for (Index k = 0; k < w.size(); ++k) w[k] = normal(rng);
    for (auto& bb : v.biases)
      for (Index k = 0; k < bb.size(); ++k) bb[k] = normal(rng);
    const TangentVector va = layer_normalized(a, v);
    const TangentVector vb = layer_normalized(b, v);
    for (int s = 0; s < cfg.samples; ++s) {
      const double t = -1.0 + 2.0 * s / (cfg.samples - 1);
      rows.push_back({d, t, eval(graph, displaced(a, t, va), data), eval(graph, displaced(b, t, vb), data)});
    }
  }
  return rows;
}

std::string lineplot_csv(const std::vector<LineplotRow>& rows) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "direction,t,loss_a,loss_b\n";
  for (const auto& r : rows) os << r.direction << ',' << r.t << ',' << r.loss_a << ',' << r.loss_b << '\n';
  return os.str();
}

// ---- single measurement ---------------------------------------------------

json MeasureReport::to_json() const {
  json j = {{"mode", to_string(mode)},
            {"loss", loss},
            {"epsilon", epsilon},
            {"riemannian", spectral_json(riemannian)},
            {"riemannian_sharpness", riemannian_sharpness}};
  j["euclidean"] = euclidean ? spectral_json(*euclidean) : json(nullptr);
  j["euclidean_sharpness"] = euclidean_sharpness ? json(*euclidean_sharpness) : json(nullptr);
  j["projected_sigma"] = projected_sigma ? json(*projected_sigma) : json(nullptr);
  j["projection_relative_difference"] =
      projection_relative_difference ? json(*projection_relative_difference) : json(nullptr);
  return j;
}

MeasureReport run_measure(const LossGraph& graph, const ParamPoint& point, const Dataset& data,
                          const MeasureConfig& cfg) {
  MeasureReport rep;
  rep.mode = cfg.mode.value_or(default_mode(point));
  rep.epsilon = cfg.epsilon;
  rep.loss = eval(graph, point, data, cfg.power.eval);
  PowerConfig plain = cfg.power;
  plain.project_horizontal = false;
  rep.riemannian = riemannian_power_method(rep.mode, graph, point, data, plain);
  // The spectral norm is the magnitude of the dominant eigenvalue.
  rep.riemannian_sharpness = epsilon_sharpness(rep.loss, std::abs(rep.riemannian.eigenvalue), cfg.epsilon);
  if (cfg.euclidean) {
    rep.euclidean = euclidean_power_method(graph, point, data, plain);
    rep.euclidean_sharpness = epsilon_sharpness(rep.loss, std::abs(rep.euclidean->eigenvalue), cfg.epsilon);
  }
  if (cfg.verify_projection || cfg.power.project_horizontal) {
    PowerConfig projected = cfg.power;
    projected.project_horizontal = true;
    const SpectralResult pr = riemannian_power_method(rep.mode, graph, point, data, projected);
    rep.projected_sigma = pr.eigenvalue;
    rep.projection_relative_difference = relative_difference(rep.riemannian.eigenvalue, pr.eigenvalue);
  }
  return rep;
}

}  // namespace flatness
