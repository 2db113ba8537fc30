#include "lipscope/toy_training.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "lipscope/rng.hpp"

namespace lipscope {

namespace {

// Minimal reverse-mode tape over dense matrices; only the ops the toy network needs.
class Tape {
 public:
  using Id = std::size_t;

  Id leaf(DenseMatrix value) { return push(std::move(value), {}); }

  const DenseMatrix& value(Id id) const { return nodes_[id].value; }
  const DenseMatrix& grad(Id id) const { return nodes_[id].grad; }

  Id matmul(Id a, Id b) {
    return push(lipscope::matmul(value(a), value(b)), [this, a, b](const DenseMatrix& g) {
      accumulate(a, matmul_nt(g, value(b)));
      accumulate(b, lipscope::matmul_tn(value(a), g));
    });
  }

  // a^T b
  Id matmul_tn(Id a, Id b) {
    return push(lipscope::matmul_tn(value(a), value(b)), [this, a, b](const DenseMatrix& g) {
      accumulate(a, matmul_nt(value(b), g));
      accumulate(b, lipscope::matmul(value(a), g));
    });
  }

  Id add(Id a, Id b) {
    return push(value(a) + value(b), [this, a, b](const DenseMatrix& g) {
      accumulate(a, g);
      accumulate(b, g);
    });
  }

  Id scale(Id a, double s) {
    return push(value(a) * s, [this, a, s](const DenseMatrix& g) { accumulate(a, g * s); });
  }

  // a + b broadcast over columns; b is a column vector leaf.
  Id add_bias(Id a, Id b) {
    DenseMatrix y = value(a);
    const DenseMatrix& bias = value(b);
    for (std::size_t r = 0; r < y.rows(); ++r)
      for (double& v : y.row(r)) v += bias(r, 0);
    return push(std::move(y), [this, a, b](const DenseMatrix& g) {
      accumulate(a, g);
      DenseMatrix gb(g.rows(), 1);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (double v : g.row(r)) gb(r, 0) += v;
      accumulate(b, gb);
    });
  }

  Id relu(Id a) {
    DenseMatrix y = value(a);
    for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
    return push(std::move(y), [this, a](const DenseMatrix& g) {
      DenseMatrix ga = g;
      const auto x = value(a).data();
      auto gd = ga.data();
      for (std::size_t i = 0; i < gd.size(); ++i)
        if (!(x[i] > 0.0)) gd[i] = 0.0;
      accumulate(a, ga);
    });
  }

  Id rows(Id a, std::size_t first, std::size_t count) {
    return push(value(a).row_block(first, count), [this, a, first](const DenseMatrix& g) {
      DenseMatrix ga(value(a).rows(), value(a).cols());
      ga.set_row_block(first, g);
      accumulate(a, ga);
    });
  }

  Id stack_rows(const std::vector<Id>& parts) {
    std::size_t total = 0;
    for (Id p : parts) total += value(p).rows();
    DenseMatrix y(total, value(parts.front()).cols());
    std::size_t at = 0;
    for (Id p : parts) {
      y.set_row_block(at, value(p));
      at += value(p).rows();
    }
    return push(std::move(y), [this, parts](const DenseMatrix& g) {
      std::size_t at = 0;
      for (Id p : parts) {
        const std::size_t n = value(p).rows();
        accumulate(p, g.row_block(at, n));
        at += n;
      }
    });
  }

  Id softmax_cols(Id a) {
    DenseMatrix y = value(a);
    for (std::size_t c = 0; c < y.cols(); ++c) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t r = 0; r < y.rows(); ++r) m = std::max(m, y(r, c));
      double s = 0.0;
      for (std::size_t r = 0; r < y.rows(); ++r) s += (y(r, c) = std::exp(y(r, c) - m));
      for (std::size_t r = 0; r < y.rows(); ++r) y(r, c) /= s;
    }
    const Id out = nodes_.size();
    return push(std::move(y), [this, a, out](const DenseMatrix& g) {
      const DenseMatrix& y = value(out);
      DenseMatrix ga(y.rows(), y.cols());
      for (std::size_t c = 0; c < y.cols(); ++c) {
        double dot = 0.0;
        for (std::size_t r = 0; r < y.rows(); ++r) dot += y(r, c) * g(r, c);
        for (std::size_t r = 0; r < y.rows(); ++r) ga(r, c) = y(r, c) * (g(r, c) - dot);
      }
      accumulate(a, ga);
    });
  }

  // Column-wise LayerNorm with fixed gamma and beta, same form as the layer zoo.
  Id layer_norm(Id a, const LayerNorm& ln) {
    const DenseMatrix& x = value(a);
    const std::size_t d = x.rows();
    DenseMatrix centered(d, x.cols());
    Vector inv(x.cols());
    DenseMatrix y(d, x.cols());
    for (std::size_t c = 0; c < x.cols(); ++c) {
      double mean = 0.0;
      for (std::size_t r = 0; r < d; ++r) mean += x(r, c);
      mean /= static_cast<double>(d);
      double s = 0.0;
      for (std::size_t r = 0; r < d; ++r) {
        centered(r, c) = x(r, c) - mean;
        s += centered(r, c) * centered(r, c);
      }
      inv[c] = 1.0 / std::sqrt(s + ln.eps);
      for (std::size_t r = 0; r < d; ++r) y(r, c) = ln.gamma[r] * centered(r, c) * inv[c] + ln.beta[r];
    }
    return push(std::move(y), [this, a, ln, centered, inv](const DenseMatrix& g) {
      const std::size_t d = centered.rows();
      DenseMatrix ga(d, centered.cols());
      for (std::size_t c = 0; c < centered.cols(); ++c) {
        double dot = 0.0;
        for (std::size_t r = 0; r < d; ++r) dot += centered(r, c) * ln.gamma[r] * g(r, c);
        const double k = dot * inv[c] * inv[c];
        double mean = 0.0;
        for (std::size_t r = 0; r < d; ++r) {
          ga(r, c) = inv[c] * (ln.gamma[r] * g(r, c) - centered(r, c) * k);
          mean += ga(r, c);
        }
        mean /= static_cast<double>(d);
        for (std::size_t r = 0; r < d; ++r) ga(r, c) -= mean;
      }
      accumulate(a, ga);
    });
  }

  Id mse(Id a, const DenseMatrix& target) {
    const DenseMatrix& p = value(a);
    const double m = static_cast<double>(p.size());
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double e = p.data()[i] - target.data()[i];
      s += e * e;
    }
    return push(DenseMatrix(1, 1, s / m), [this, a, target, m](const DenseMatrix& g) {
      DenseMatrix ga = value(a) - target;
      ga *= 2.0 * g(0, 0) / m;
      accumulate(a, ga);
    });
  }

  void backward(Id root) {
    for (auto& n : nodes_) n.grad = DenseMatrix(n.value.rows(), n.value.cols());
    nodes_[root].grad = DenseMatrix(1, 1, 1.0);
    for (std::size_t i = root + 1; i-- > 0;)
      if (nodes_[i].backward) nodes_[i].backward(nodes_[i].grad);
  }

 private:
  struct Node {
    DenseMatrix value;
    DenseMatrix grad;
    std::function<void(const DenseMatrix&)> backward;
  };

  Id push(DenseMatrix value, std::function<void(const DenseMatrix&)> backward) {
    nodes_.push_back(Node{std::move(value), {}, std::move(backward)});
    return nodes_.size() - 1;
  }

  void accumulate(Id id, const DenseMatrix& g) { nodes_[id].grad += g; }

  std::vector<Node> nodes_;
};

struct Param {
  std::string id;
  DenseMatrix value;
  SgdState sgd;
  AdamState adam;
};

struct ToyModel {
  struct Block {
    std::size_t wq = 0, wk = 0, wv = 0, w1 = 0, b1 = 0, w2 = 0, b2 = 0;  // indices into params
    std::optional<LayerNorm> norm1, norm2;
  };
  std::vector<Block> blocks;
  std::size_t head = 0;
  std::size_t heads = 1;
  bool residual = true;
  std::vector<Param> params;
};

ToyModel make_model(const ToyTrainingConfig& cfg) {
  const Network net = Network::build(cfg.net, cfg.seed);
  ToyModel model;
  model.heads = cfg.net.heads;
  model.residual = cfg.net.use_residual;
  auto add = [&](std::string id, DenseMatrix value) {
    model.params.push_back(Param{std::move(id), std::move(value), {}, {}});
    return model.params.size() - 1;
  };
  auto norm_of = [](const Stage& s) -> std::optional<LayerNorm> {
    if (s.post.empty()) return std::nullopt;
    return std::get<LayerNorm>(s.post.front().op);
  };
  for (std::size_t l = 0; l < net.depth(); ++l) {
    const auto& layer = net.layers()[l];
    const auto& attn = std::get<AttentionParams>(layer[0].body);
    const auto& ffn = std::get<FFN>(std::get<LayerChain>(layer[1].body).front().op);
    const std::string p = "l" + std::to_string(l) + ".";
    ToyModel::Block b;
    b.wq = add(p + "wq", attn.wq);
    b.wk = add(p + "wk", attn.wk);
    b.wv = add(p + "wv", attn.wv);
    b.w1 = add(p + "w1", ffn.w1);
    b.b1 = add(p + "b1", DenseMatrix::column(ffn.b1));
    b.w2 = add(p + "w2", ffn.w2);
    b.b2 = add(p + "b2", DenseMatrix::column(ffn.b2));
    b.norm1 = norm_of(layer[0]);
    b.norm2 = norm_of(layer[1]);
    model.blocks.push_back(std::move(b));
  }
  InitSpec head_init{InitMethod::XavierNormal, 1.0};
  model.head = add("head", init_matrix(head_init, cfg.net.width, cfg.head_out,
                                       derive_seed(cfg.seed, {kStreamWeights, cfg.net.depth, 0})));
  return model;
}

double forward_backward(ToyModel& model, const DenseMatrix& x, const DenseMatrix& target,
                        std::vector<DenseMatrix>& grads) {
  Tape tape;
  std::vector<Tape::Id> ids;
  for (const auto& p : model.params) ids.push_back(tape.leaf(p.value));

  Tape::Id h = tape.leaf(x);
  const std::size_t d = x.rows();
  const std::size_t dh = d / model.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const auto& b : model.blocks) {
    const Tape::Id q = tape.matmul(ids[b.wq], h);
    const Tape::Id k = tape.matmul(ids[b.wk], h);
    const Tape::Id v = tape.matmul(ids[b.wv], h);
    std::vector<Tape::Id> parts;
    for (std::size_t i = 0; i < model.heads; ++i) {
      const Tape::Id s = tape.scale(tape.matmul_tn(tape.rows(q, i * dh, dh), tape.rows(k, i * dh, dh)), scale);
      parts.push_back(tape.matmul(tape.rows(v, i * dh, dh), tape.softmax_cols(s)));
    }
    Tape::Id y = tape.stack_rows(parts);
    if (model.residual) y = tape.add(h, y);
    if (b.norm1) y = tape.layer_norm(y, *b.norm1);

    const Tape::Id hidden = tape.relu(tape.add_bias(tape.matmul(ids[b.w1], y), ids[b.b1]));
    Tape::Id z = tape.add_bias(tape.matmul(ids[b.w2], hidden), ids[b.b2]);
    if (model.residual) z = tape.add(y, z);
    if (b.norm2) z = tape.layer_norm(z, *b.norm2);
    h = z;
  }
  const Tape::Id loss = tape.mse(tape.matmul(ids[model.head], h), target);
  tape.backward(loss);
  grads.clear();
  for (Tape::Id id : ids) grads.push_back(tape.grad(id));
  return tape.value(loss)(0, 0);
}

bool finite(const DenseMatrix& m) { return all_finite(m.data()); }

DenseMatrix make_teacher(const ToyTrainingConfig& cfg) {
  DenseMatrix teacher(cfg.head_out, cfg.net.width);
  Rng(cfg.seed, {kStreamData, 0xFFFF}).fill_normal(teacher.data(), 1.0 / std::sqrt(static_cast<double>(cfg.net.width)));
  return teacher;
}

DenseMatrix make_batch(const ToyTrainingConfig& cfg, std::size_t step) {
  DenseMatrix x(cfg.net.width, cfg.net.tokens());
  Rng(cfg.seed, {kStreamData, step}).fill_normal(x.data());
  return x;
}

}  // namespace

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::SGD ? "sgd" : "adamw"; }

OptimizerKind optimizer_kind_from_string(const std::string& text) {
  if (text == "sgd") return OptimizerKind::SGD;
  if (text == "adamw") return OptimizerKind::AdamW;
  throw ValidationError("unknown optimizer '" + text + "' (expected sgd|adamw)");
}

NetworkSpec ToyTrainingConfig::toy_default_spec() {
  NetworkSpec s;
  s.family = Family::TransformerDPA;
  s.depth = 4;
  s.width = 8;
  s.heads = 2;
  s.input_height = 2;
  s.input_width = 2;
  s.init = InitSpec{InitMethod::XavierNormal, 1.0};
  return s;
}

void validate_toy(const ToyTrainingConfig& c) {
  validate_spec(c.net);
  std::vector<std::string> v;
  if (c.net.family != Family::TransformerDPA) v.push_back("toy training supports transformer_dpa only");
  if (c.net.use_norm && c.net.effective_norm() != NormLayerKind::LayerNorm)
    v.push_back("toy training supports LayerNorm only");
  if (c.net.wrs_nu_init) v.push_back("toy training does not support weighted shortcuts");
  if (c.net.width * c.net.tokens() > kJacobianGuard) v.push_back("toy network too large (width * tokens > 4096)");
  if (c.head_out == 0) v.push_back("head_out must be >= 1");
  if (c.steps == 0) v.push_back("steps must be >= 1");
  if (!(c.lr >= 0.0) || !std::isfinite(c.lr)) v.push_back("lr must be finite and >= 0");
  if (!(c.weight_decay >= 0.0)) v.push_back("weight_decay must be >= 0");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) v.push_back("momentum must be in [0, 1)");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0)) v.push_back("beta1 must be in [0, 1)");
  if (!(c.beta2 >= 0.0 && c.beta2 < 1.0)) v.push_back("beta2 must be in [0, 1)");
  if (!(c.adam_eps > 0.0)) v.push_back("adam_eps must be > 0");
  if (!(c.clip_norm >= 0.0)) v.push_back("clip_norm must be >= 0");
  if (!v.empty()) throw ValidationError(std::move(v));
}

std::string StepTrace::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "step,weight_id,sigma_max,max_update,loss\n";
  for (const auto& r : records)
    os << r.step << ',' << r.weight_id << ',' << r.sigma_max << ',' << r.max_update << ',' << r.loss << '\n';
  return os.str();
}

StepTrace run_toy_training(const ToyTrainingConfig& cfg) {
  validate_toy(cfg);
  ToyModel model = make_model(cfg);
  for (auto& p : model.params) {
    p.sgd.beta = cfg.momentum;
    p.sgd.weight_decay = cfg.weight_decay;
    p.sgd.schedule = constant_schedule(cfg.lr);
    p.adam.beta1 = cfg.beta1;
    p.adam.beta2 = cfg.beta2;
    p.adam.eps = cfg.adam_eps;
    p.adam.weight_decay = cfg.weight_decay;
    p.adam.bias_correction = cfg.bias_correction;
    p.adam.update_form = cfg.update_form;
    p.adam.schedule = constant_schedule(cfg.lr);
  }

  const DenseMatrix teacher = make_teacher(cfg);

  StepTrace trace;
  for (const auto& p : model.params) trace.weight_ids.push_back(p.id);
  std::vector<DenseMatrix> grads;
  for (std::size_t t = 1; t <= cfg.steps; ++t) {
    const DenseMatrix x = make_batch(cfg, t);
    const DenseMatrix target = matmul(teacher, x);

    const double loss = forward_backward(model, x, target, grads);
    bool ok = std::isfinite(loss);
    for (const auto& g : grads) ok = ok && finite(g);
    if (!ok) {
      trace.diverged = true;
      trace.diverged_step = t;
      break;
    }
    if (cfg.zero_gradients)
      for (auto& g : grads) g = DenseMatrix(g.rows(), g.cols());
    else if (cfg.clip_norm > 0.0)
      grads = clip_global_norm(std::move(grads), cfg.clip_norm);

    for (std::size_t i = 0; i < model.params.size(); ++i) {
      Param& p = model.params[i];
      DenseMatrix next = cfg.optimizer == OptimizerKind::SGD ? sgd_step(p.sgd, p.value, grads[i], t)
                                                             : adamw_step(p.adam, p.value, grads[i], t);
      const double step = max_abs((next - p.value).data());
      p.value = std::move(next);
      if (!finite(p.value)) {
        trace.diverged = true;
        trace.diverged_step = t;
      }
      const double sigma = trace.diverged ? std::numeric_limits<double>::infinity()
                                          : spectral_norm_robust(p.value);
      trace.records.push_back(StepRecord{t, p.id, sigma, step, loss});
    }
    if (trace.diverged) break;
  }
  return trace;
}

ThresholdResult divergence_threshold(ToyTrainingConfig cfg, double lo, double hi, std::size_t iterations) {
  if (!(lo > 0.0) || !(hi > lo)) throw ValidationError("divergence_threshold: need 0 < lo < hi");
  ThresholdResult result;
  auto diverges = [&](double lr) {
    cfg.lr = lr;
    ++result.probes;
    return run_toy_training(cfg).diverged;
  };
  if (!diverges(hi)) {
    result.threshold = std::numeric_limits<double>::infinity();
    return result;
  }
  if (diverges(lo)) {
    result.threshold = lo;
    result.found = true;
    return result;
  }
  double a = std::log(lo);
  double b = std::log(hi);
  for (std::size_t i = 0; i < iterations; ++i) {
    const double mid = 0.5 * (a + b);
    if (diverges(std::exp(mid))) b = mid;
    else a = mid;
  }
  result.threshold = std::exp(b);
  result.found = true;
  return result;
}

ToyGradients toy_gradients(const ToyTrainingConfig& cfg, std::size_t step) {
  validate_toy(cfg);
  ToyModel model = make_model(cfg);
  const DenseMatrix x = make_batch(cfg, step);
  ToyGradients out;
  out.loss = forward_backward(model, x, matmul(make_teacher(cfg), x), out.grads);
  for (const auto& p : model.params) {
    out.ids.push_back(p.id);
    out.values.push_back(p.value);
  }
  return out;
}

double toy_loss(const ToyTrainingConfig& cfg, const std::vector<DenseMatrix>& values, std::size_t step) {
  validate_toy(cfg);
  ToyModel model = make_model(cfg);
  if (values.size() != model.params.size()) throw ValidationError("toy_loss: wrong number of weights");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].rows() != model.params[i].value.rows() || values[i].cols() != model.params[i].value.cols())
      throw ShapeError("toy_loss: weight " + model.params[i].id + " has the wrong shape");
    model.params[i].value = values[i];
  }
  const DenseMatrix x = make_batch(cfg, step);
  std::vector<DenseMatrix> grads;
  return forward_backward(model, x, matmul(make_teacher(cfg), x), grads);
}

DenseMatrix toy_teacher(const ToyTrainingConfig& cfg) { return make_teacher(cfg); }
DenseMatrix toy_batch(const ToyTrainingConfig& cfg, std::size_t step) { return make_batch(cfg, step); }

}  // namespace lipscope
