#include <algorithm>
#include <cmath>
#include <numeric>

#include "cbal/models.hpp"
#include "model_common.hpp"

namespace cbal {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEpsilon = 1e-8;

std::size_t output_width(MlpHead head) { return head == MlpHead::Softmax ? 2 : 1; }

/// Activations for one mini-batch, kept for the backward pass.
struct Workspace {
  std::vector<std::vector<double>> pre;   // per layer, batch x outputs
  std::vector<std::vector<double>> post;  // per layer, batch x outputs (ReLU or logits)
  std::vector<double> delta;
  std::vector<double> delta_prev;
};

void layer_forward(const DenseLayer& layer, const double* in, std::size_t batch, double* out) {
  for (std::size_t i = 0; i < batch; ++i) {
    const double* a = in + i * layer.inputs;
    double* z = out + i * layer.outputs;
    for (std::size_t o = 0; o < layer.outputs; ++o) {
      const double* w = layer.weights.data() + o * layer.inputs;
      double s = layer.bias[o];
      for (std::size_t k = 0; k < layer.inputs; ++k) s += w[k] * a[k];
      z[o] = s;
    }
  }
}

/// Forward pass over `batch` contiguous rows starting at `x`.
void forward(const MlpParams& params, const double* x, std::size_t batch, Workspace& ws) {
  const std::size_t depth = params.layers.size();
  ws.pre.resize(depth);
  ws.post.resize(depth);
  const double* in = x;
  for (std::size_t l = 0; l < depth; ++l) {
    const auto& layer = params.layers[l];
    ws.pre[l].resize(batch * layer.outputs);
    ws.post[l].resize(batch * layer.outputs);
    layer_forward(layer, in, batch, ws.pre[l].data());
    if (l + 1 < depth) {
      for (std::size_t i = 0; i < ws.pre[l].size(); ++i) {
        ws.post[l][i] = ws.pre[l][i] > 0.0 ? ws.pre[l][i] : 0.0;
      }
    } else {
      ws.post[l] = ws.pre[l];
    }
    in = ws.post[l].data();
  }
}

/// Loss of the batch plus gradient accumulation (scaled by `weight`) into `grad`.
double backward(const MlpParams& params, const double* x, const double* y, std::size_t batch,
                Workspace& ws, MlpParams* grad, double weight) {
  const std::size_t depth = params.layers.size();
  const auto& logits = ws.post[depth - 1];
  const std::size_t width = params.layers.back().outputs;
  double loss = 0.0;
  ws.delta.assign(batch * width, 0.0);
  for (std::size_t i = 0; i < batch; ++i) {
    if (params.head == MlpHead::Regression) {
      const double r = logits[i] - y[i];
      loss += r * r;
      ws.delta[i] = 2.0 * r * weight;
    } else {
      const double z0 = logits[2 * i];
      const double z1 = logits[2 * i + 1];
      const double m = std::max(z0, z1);
      const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
      const double p1 = std::exp(z1 - lse);
      const double p0 = std::exp(z0 - lse);
      const bool positive = y[i] == 1.0;
      loss += lse - (positive ? z1 : z0);
      ws.delta[2 * i] = (p0 - (positive ? 0.0 : 1.0)) * weight;
      ws.delta[2 * i + 1] = (p1 - (positive ? 1.0 : 0.0)) * weight;
    }
  }
  if (grad == nullptr) return loss;

  for (std::size_t l = depth; l-- > 0;) {
    const auto& layer = params.layers[l];
    auto& g = grad->layers[l];
    const double* in = l == 0 ? x : ws.post[l - 1].data();
    for (std::size_t i = 0; i < batch; ++i) {
      const double* a = in + i * layer.inputs;
      const double* d = ws.delta.data() + i * layer.outputs;
      for (std::size_t o = 0; o < layer.outputs; ++o) {
        const double dv = d[o];
        if (dv == 0.0) continue;
        double* gw = g.weights.data() + o * layer.inputs;
        for (std::size_t k = 0; k < layer.inputs; ++k) gw[k] += dv * a[k];
        g.bias[o] += dv;
      }
    }
    if (l == 0) break;
    ws.delta_prev.assign(batch * layer.inputs, 0.0);
    for (std::size_t i = 0; i < batch; ++i) {
      const double* d = ws.delta.data() + i * layer.outputs;
      double* dp = ws.delta_prev.data() + i * layer.inputs;
      for (std::size_t o = 0; o < layer.outputs; ++o) {
        const double dv = d[o];
        if (dv == 0.0) continue;
        const double* w = layer.weights.data() + o * layer.inputs;
        for (std::size_t k = 0; k < layer.inputs; ++k) dp[k] += dv * w[k];
      }
      const double* pre = ws.pre[l - 1].data() + i * layer.inputs;
      for (std::size_t k = 0; k < layer.inputs; ++k) {
        if (pre[k] <= 0.0) dp[k] = 0.0;
      }
    }
    std::swap(ws.delta, ws.delta_prev);
  }
  return loss;
}

MlpParams zeros_like(const MlpParams& p) {
  MlpParams z = p;
  for (auto& layer : z.layers) {
    std::fill(layer.weights.begin(), layer.weights.end(), 0.0);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  }
  return z;
}

struct AdamState {
  MlpParams m;
  MlpParams v;
  std::size_t step = 0;
};

void adam_update(MlpParams& params, const MlpParams& grad, AdamState& st, double lr) {
  ++st.step;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(st.step));
  const auto update = [&](std::vector<double>& w, const std::vector<double>& g,
                          std::vector<double>& m, std::vector<double>& v) {
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = kAdamBeta1 * m[k] + (1.0 - kAdamBeta1) * g[k];
      v[k] = kAdamBeta2 * v[k] + (1.0 - kAdamBeta2) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + kAdamEpsilon);
    }
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    update(params.layers[l].weights, grad.layers[l].weights, st.m.layers[l].weights,
           st.v.layers[l].weights);
    update(params.layers[l].bias, grad.layers[l].bias, st.m.layers[l].bias,
           st.v.layers[l].bias);
  }
}

double dataset_loss(const MlpParams& params, const Matrix& z, std::span<const double> y) {
  constexpr std::size_t kChunk = 512;
  Workspace ws;
  double total = 0.0;
  for (std::size_t start = 0; start < z.rows(); start += kChunk) {
    const std::size_t batch = std::min(kChunk, z.rows() - start);
    forward(params, z.row(start).data(), batch, ws);
    total += backward(params, z.row(start).data(), y.data() + start, batch, ws, nullptr, 0.0);
  }
  return total / static_cast<double>(z.rows());
}

}  // namespace

MlpParams init_mlp(std::size_t inputs, std::span<const std::size_t> hidden, MlpHead head,
                   Rng& rng) {
  MlpParams p;
  p.head = head;
  std::size_t fan_in = inputs;
  std::vector<std::size_t> widths(hidden.begin(), hidden.end());
  widths.push_back(output_width(head));
  for (std::size_t w : widths) {
    if (w == 0) throw ParameterError("layer widths must be at least 1");
    DenseLayer layer;
    layer.inputs = fan_in;
    layer.outputs = w;
    const double limit = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    layer.weights.resize(fan_in * w);
    for (auto& v : layer.weights) v = rng.uniform(-limit, limit);
    layer.bias.assign(w, 0.0);
    p.layers.push_back(std::move(layer));
    fan_in = w;
  }
  return p;
}

std::vector<double> mlp_output(const MlpParams& params, std::span<const double> x) {
  std::vector<double> cur(x.begin(), x.end());
  std::vector<double> next;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    next.resize(layer.outputs);
    layer_forward(layer, cur.data(), 1, next.data());
    if (l + 1 < params.layers.size()) {
      for (auto& v : next) v = v > 0.0 ? v : 0.0;
    }
    std::swap(cur, next);
  }
  if (params.head == MlpHead::Softmax) {
    const double m = std::max(cur[0], cur[1]);
    const double e0 = std::exp(cur[0] - m);
    const double e1 = std::exp(cur[1] - m);
    const double s = e0 + e1;
    return {e0 / s, e1 / s};
  }
  return cur;
}

double mlp_loss(const MlpParams& params, const Matrix& x, std::span<const double> y,
                MlpParams* gradient) {
  if (x.rows() == 0) throw FitError("empty batch");
  if (x.cols() != params.layers.front().inputs) throw SchemaError("batch width mismatch");
  Workspace ws;
  forward(params, x.data().data(), x.rows(), ws);
  const double inv_n = 1.0 / static_cast<double>(x.rows());
  if (gradient != nullptr) *gradient = zeros_like(params);
  return backward(params, x.data().data(), y.data(), x.rows(), ws, gradient, inv_n) * inv_n;
}

TrainedModel fit_mlp(const Matrix& x, std::span<const double> y, const MlpConfig& cfg,
                     MlpHead head, const FitOptions& options,
                     std::optional<ValidationSet> validation) {
  detail::check_training_data(x, y);
  if (cfg.batch_size == 0 || cfg.max_epochs == 0) {
    throw ParameterError("batch size and epoch budget must be positive");
  }
  if (head == MlpHead::Softmax) {
    for (double v : y) {
      if (v != 0.0 && v != 1.0) throw FitError("softmax labels must be 0 or 1");
    }
  }
  auto inputs = detail::prepare_inputs(x, options);
  Rng rng(derive_seed(cfg.seed, "mlp"));

  // Split off validation rows when none were supplied.
  std::vector<std::size_t> train_rows(x.rows());
  std::iota(train_rows.begin(), train_rows.end(), std::size_t{0});
  Matrix val_z;
  std::vector<double> val_y;
  if (validation && validation->x != nullptr && validation->x->rows() > 0) {
    if (validation->x->cols() != x.cols()) throw SchemaError("validation width mismatch");
    val_z = Matrix(validation->x->rows(), inputs.columns.size());
    for (std::size_t r = 0; r < val_z.rows(); ++r) {
      for (std::size_t j = 0; j < inputs.columns.size(); ++j) {
        const auto c = inputs.columns[j];
        val_z(r, j) = inputs.normalizer.apply_one(c, (*validation->x)(r, c));
      }
    }
    val_y.assign(validation->y.begin(), validation->y.end());
  } else if (cfg.validation_fraction > 0.0 && x.rows() >= 10) {
    rng.shuffle(std::span(train_rows));
    const auto held = std::max<std::size_t>(
        1, static_cast<std::size_t>(cfg.validation_fraction * static_cast<double>(x.rows())));
    std::vector<std::size_t> val_rows(train_rows.end() - static_cast<std::ptrdiff_t>(held),
                                      train_rows.end());
    train_rows.resize(train_rows.size() - held);
    std::sort(train_rows.begin(), train_rows.end());
    val_z = inputs.z.select_rows(val_rows);
    for (auto r : val_rows) val_y.push_back(y[r]);
  }

  MlpParams params = init_mlp(inputs.columns.size(), cfg.hidden, head, rng);
  std::vector<double> targets(y.begin(), y.end());
  if (head == MlpHead::Regression) {
    double mean = 0.0;
    for (auto r : train_rows) mean += y[r];
    mean /= static_cast<double>(train_rows.size());
    double var = 0.0;
    for (auto r : train_rows) var += (y[r] - mean) * (y[r] - mean);
    const double sd = std::sqrt(var / static_cast<double>(train_rows.size()));
    params.target_offset = mean;
    params.target_scale = sd > 1e-12 ? sd : 1.0;
    for (auto& t : targets) t = (t - params.target_offset) / params.target_scale;
    for (auto& t : val_y) t = (t - params.target_offset) / params.target_scale;
  }

  Matrix train_z = inputs.z.select_rows(train_rows);
  std::vector<double> train_y;
  train_y.reserve(train_rows.size());
  for (auto r : train_rows) train_y.push_back(targets[r]);

  const bool have_val = val_z.rows() > 0;
  const std::size_t n = train_z.rows();
  const std::size_t width = train_z.cols();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  AdamState adam{zeros_like(params), zeros_like(params), 0};
  MlpParams grad = zeros_like(params);
  MlpParams best = params;
  double best_loss = have_val ? dataset_loss(params, val_z, val_y)
                              : dataset_loss(params, train_z, train_y);
  std::size_t since_best = 0;
  std::size_t epochs_run = 0;
  Matrix batch_x(cfg.batch_size, width);
  std::vector<double> batch_y(cfg.batch_size);
  Workspace ws;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    epochs_run = epoch;
    rng.shuffle(std::span(order));
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, n - start);
      for (std::size_t i = 0; i < b; ++i) {
        auto src = train_z.row(order[start + i]);
        std::copy(src.begin(), src.end(), batch_x.row(i).begin());
        batch_y[i] = train_y[order[start + i]];
      }
      forward(params, batch_x.data().data(), b, ws);
      for (auto& layer : grad.layers) {
        std::fill(layer.weights.begin(), layer.weights.end(), 0.0);
        std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
      }
      backward(params, batch_x.data().data(), batch_y.data(), b, ws, &grad,
               1.0 / static_cast<double>(b));
      adam_update(params, grad, adam, cfg.learning_rate);
    }
    const double loss = have_val ? dataset_loss(params, val_z, val_y)
                                 : dataset_loss(params, train_z, train_y);
    if (!std::isfinite(loss)) {
      throw DivergenceError("MLP loss became non-finite at epoch " + std::to_string(epoch) +
                            " with learning rate " + format_double(cfg.learning_rate));
    }
    if (loss < best_loss) {
      best_loss = loss;
      best = params;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }

  const auto kind = head == MlpHead::Softmax ? ModelKind::MlpSoftmax : ModelKind::MlpRegressor;
  auto model = detail::make_model(kind, std::move(best), std::move(inputs), x.cols(), options);
  model.metadata["epochs"] = std::to_string(epochs_run);
  model.metadata["best_validation_loss"] = format_double(best_loss);
  model.metadata["learning_rate"] = format_double(cfg.learning_rate);
  model.metadata["batch_size"] = std::to_string(cfg.batch_size);
  std::string widths;
  for (auto w : cfg.hidden) widths += (widths.empty() ? "" : ",") + std::to_string(w);
  model.metadata["hidden"] = widths;
  return model;
}

}  // namespace cbal
