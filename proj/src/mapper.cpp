#include "sms/mapper.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "sms/binio.hpp"
#include "sms/rng.hpp"
#include "sms/search.hpp"

namespace sms {

namespace {

constexpr double kLnEpsilon = 1e-5;

using MatMap = Eigen::Map<Matrix>;
using VecMap = Eigen::Map<Vector>;
using CMatMap = Eigen::Map<const Matrix>;
using CVecMap = Eigen::Map<const Vector>;

std::size_t tf_layer_size(const MapperConfig& c) {
  const std::size_t d = c.model_dim;
  const std::size_t f = c.ffn_dim;
  return 5 * d + 4 * d * d + 2 * d * f + f;
}

// Offsets of one transformer layer's tensors inside the flat vector.
struct TfOffsets {
  std::size_t ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;

  TfOffsets(const MapperConfig& c, int layer) {
    const std::size_t d = c.model_dim;
    const std::size_t f = c.ffn_dim;
    std::size_t o = static_cast<std::size_t>(layer) * tf_layer_size(c);
    ln1_g = o; o += d;
    ln1_b = o; o += d;
    wq = o; o += d * d;
    wk = o; o += d * d;
    wv = o; o += d * d;
    wo = o; o += d * d;
    ln2_g = o; o += d;
    ln2_b = o; o += d;
    w1 = o; o += d * f;
    b1 = o; o += f;
    w2 = o; o += f * d;
    b2 = o; o += d;
  }
};

struct MlpOffsets {
  std::size_t w1, b1, w2, b2;

  explicit MlpOffsets(const MapperConfig& c) {
    const std::size_t d = c.model_dim;
    const std::size_t h = c.hidden_dim;
    w1 = 0;
    b1 = d * h;
    w2 = b1 + h;
    b2 = w2 + h * d;
  }
};

template <typename Ptr>
struct TfLayer {
  using Mat = std::conditional_t<std::is_const_v<std::remove_pointer_t<Ptr>>, CMatMap, MatMap>;
  using Vec = std::conditional_t<std::is_const_v<std::remove_pointer_t<Ptr>>, CVecMap, VecMap>;

  Vec ln1_g, ln1_b;
  Mat wq, wk, wv, wo;
  Vec ln2_g, ln2_b;
  Mat w1;
  Vec b1;
  Mat w2;
  Vec b2;

  TfLayer(Ptr base, const MapperConfig& c, int layer)
      : TfLayer(base, c, TfOffsets(c, layer)) {}

 private:
  TfLayer(Ptr base, const MapperConfig& c, const TfOffsets& o)
      : ln1_g(base + o.ln1_g, c.model_dim),
        ln1_b(base + o.ln1_b, c.model_dim),
        wq(base + o.wq, c.model_dim, c.model_dim),
        wk(base + o.wk, c.model_dim, c.model_dim),
        wv(base + o.wv, c.model_dim, c.model_dim),
        wo(base + o.wo, c.model_dim, c.model_dim),
        ln2_g(base + o.ln2_g, c.model_dim),
        ln2_b(base + o.ln2_b, c.model_dim),
        w1(base + o.w1, c.model_dim, c.ffn_dim),
        b1(base + o.b1, c.ffn_dim),
        w2(base + o.w2, c.ffn_dim, c.model_dim),
        b2(base + o.b2, c.model_dim) {}
};

template <typename Ptr>
struct MlpViews {
  using Mat = std::conditional_t<std::is_const_v<std::remove_pointer_t<Ptr>>, CMatMap, MatMap>;
  using Vec = std::conditional_t<std::is_const_v<std::remove_pointer_t<Ptr>>, CVecMap, VecMap>;

  Mat w1;
  Vec b1;
  Mat w2;
  Vec b2;

  MlpViews(Ptr base, const MapperConfig& c)
      : MlpViews(base, c, MlpOffsets(c)) {}

 private:
  MlpViews(Ptr base, const MapperConfig& c, const MlpOffsets& o)
      : w1(base + o.w1, c.model_dim, c.hidden_dim),
        b1(base + o.b1, c.hidden_dim),
        w2(base + o.w2, c.hidden_dim, c.model_dim),
        b2(base + o.b2, c.model_dim) {}
};

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Matrix positional_encoding(int m, int d) {
  Matrix pe(m, d);
  for (int pos = 0; pos < m; ++pos) {
    for (int j = 0; j < d; ++j) {
      const double freq = std::pow(10000.0, static_cast<double>(2 * (j / 2)) / d);
      const double angle = pos / freq;
      pe(pos, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

// Row-wise layer normalization; keeps per-row mean and inverse stddev for
// the backward pass.
void layernorm(const Matrix& x, CVecMap gain, CVecMap bias, Matrix& out, Vector& mean,
               Vector& inv_std) {
  const int m = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  out.resize(m, d);
  mean.resize(m);
  inv_std.resize(m);
  for (int i = 0; i < m; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    const double inv = 1.0 / std::sqrt(var + kLnEpsilon);
    mean(i) = mu;
    inv_std(i) = inv;
    out.row(i) = (((x.row(i).array() - mu) * inv) * gain.transpose().array()) +
                 bias.transpose().array();
  }
}

// dx for y = gain * xhat + bias; accumulates parameter gradients.
Matrix layernorm_backward(const Matrix& dy, const Matrix& x, const Vector& mean,
                          const Vector& inv_std, CVecMap gain, VecMap d_gain, VecMap d_bias) {
  const int m = static_cast<int>(x.rows());
  Matrix dx(m, x.cols());
  for (int i = 0; i < m; ++i) {
    const Eigen::ArrayXd xhat = (x.row(i).transpose().array() - mean(i)) * inv_std(i);
    const Eigen::ArrayXd dyr = dy.row(i).transpose().array();
    d_gain.array() += dyr * xhat;
    d_bias.array() += dyr;
    const Eigen::ArrayXd dxhat = dyr * gain.array();
    const double mean_dxhat = dxhat.mean();
    const double mean_dxhat_xhat = (dxhat * xhat).mean();
    dx.row(i) = (inv_std(i) * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)).transpose();
  }
  return dx;
}

struct LayerCache {
  Matrix x_in;   // layer input
  Matrix n1;     // LN1 output
  Vector mu1, inv1;
  Matrix q, k, v;
  std::vector<Matrix> attn;  // per head, m x m probabilities
  Matrix concat;             // attention heads concatenated
  Matrix x_mid;              // after attention residual
  Matrix n2;
  Vector mu2, inv2;
  Matrix z1;  // pre-GELU
  Matrix act; // GELU output
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  Matrix x_final;
  Vector pooled;  // mlp: mean of the input rows
  Vector z1;      // mlp: pre-GELU
  Vector act;     // mlp: GELU output
  Vector output;
};

ForwardCache run_forward(const MapperParams& params, const FeatureMatrix& inputs) {
  const MapperConfig& c = params.config;
  if (inputs.dim() != c.model_dim)
    throw ArgumentError("mapper forward: input dimension does not match model_dim");
  if (inputs.frame_count() < 1) throw ArgumentError("mapper forward: empty input");

  ForwardCache cache;
  const double* base = params.flat.data();

  if (c.variant == MapperVariant::kMlp) {
    const MlpViews<const double*> views(base, c);
    cache.pooled = mean_rows(inputs.rows);
    cache.z1 = views.w1.transpose() * cache.pooled + views.b1;
    cache.act = cache.z1.unaryExpr([](double v) { return gelu(v); });
    cache.output = views.w2.transpose() * cache.act + views.b2;
    return cache;
  }

  const int m = inputs.frame_count();
  const int d = c.model_dim;
  const int heads = c.heads;
  const int dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  Matrix x = inputs.rows + positional_encoding(m, d);
  cache.layers.resize(c.layers);
  for (int l = 0; l < c.layers; ++l) {
    const TfLayer<const double*> layer(base, c, l);
    LayerCache& lc = cache.layers[l];
    lc.x_in = std::move(x);

    layernorm(lc.x_in, layer.ln1_g, layer.ln1_b, lc.n1, lc.mu1, lc.inv1);
    lc.q.noalias() = lc.n1 * layer.wq;
    lc.k.noalias() = lc.n1 * layer.wk;
    lc.v.noalias() = lc.n1 * layer.wv;
    lc.concat.resize(m, d);
    lc.attn.resize(heads);
    for (int h = 0; h < heads; ++h) {
      const auto qh = lc.q.middleCols(h * dk, dk);
      const auto kh = lc.k.middleCols(h * dk, dk);
      const auto vh = lc.v.middleCols(h * dk, dk);
      Matrix scores = qh * kh.transpose() * scale;
      Matrix& probs = lc.attn[h];
      probs.resize(m, m);
      for (int i = 0; i < m; ++i) {
        const Eigen::ArrayXd shifted =
            scores.row(i).transpose().array() - scores.row(i).maxCoeff();
        const Eigen::ArrayXd e = shifted.exp();
        probs.row(i) = (e / e.sum()).transpose();
      }
      lc.concat.middleCols(h * dk, dk).noalias() = probs * vh;
    }
    lc.x_mid = lc.x_in + lc.concat * layer.wo;

    layernorm(lc.x_mid, layer.ln2_g, layer.ln2_b, lc.n2, lc.mu2, lc.inv2);
    lc.z1.noalias() = lc.n2 * layer.w1;
    lc.z1.rowwise() += layer.b1.transpose();
    lc.act = lc.z1.unaryExpr([](double v) { return gelu(v); });
    x = lc.x_mid + lc.act * layer.w2;
    x.rowwise() += layer.b2.transpose();
  }
  cache.x_final = std::move(x);
  cache.output = mean_rows(cache.x_final);
  return cache;
}

}  // namespace

void MapperConfig::validate() const {
  if (model_dim < 1) throw ArgumentError("mapper config: model_dim must be >= 1");
  if (variant == MapperVariant::kTransformer) {
    if (layers < 1) throw ArgumentError("mapper config: layers must be >= 1");
    if (heads < 1) throw ArgumentError("mapper config: heads must be >= 1");
    if (model_dim % heads != 0)
      throw ArgumentError("mapper config: model_dim must be divisible by heads");
    if (ffn_dim < 1) throw ArgumentError("mapper config: ffn_dim must be >= 1");
  } else {
    if (hidden_dim < 1) throw ArgumentError("mapper config: hidden_dim must be >= 1");
  }
}

std::size_t mapper_param_count(const MapperConfig& config) {
  config.validate();
  if (config.variant == MapperVariant::kTransformer)
    return static_cast<std::size_t>(config.layers) * tf_layer_size(config);
  const std::size_t d = config.model_dim;
  const std::size_t h = config.hidden_dim;
  return d * h + h + h * d + d;
}

MapperParams MapperParams::init(const MapperConfig& config, std::uint64_t seed,
                                double weight_init_scale) {
  config.validate();
  MapperParams params;
  params.config = config;
  params.flat = Vector::Zero(static_cast<Eigen::Index>(mapper_param_count(config)));

  Rng rng(seed);
  auto fill_matrix = [&](MatMap w) {
    const double s = weight_init_scale / std::sqrt(static_cast<double>(w.rows()));
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = s * rng.gaussian();
  };

  double* base = params.flat.data();
  if (config.variant == MapperVariant::kTransformer) {
    for (int l = 0; l < config.layers; ++l) {
      TfLayer<double*> layer(base, config, l);
      layer.ln1_g.setOnes();
      layer.ln2_g.setOnes();
      fill_matrix(layer.wq);
      fill_matrix(layer.wk);
      fill_matrix(layer.wv);
      fill_matrix(layer.wo);
      fill_matrix(layer.w1);
      fill_matrix(layer.w2);
    }
  } else {
    MlpViews<double*> views(base, config);
    fill_matrix(views.w1);
    fill_matrix(views.w2);
  }
  return params;
}

Vector forward(const MapperParams& params, const FeatureMatrix& inputs) {
  return run_forward(params, inputs).output;
}

ForwardDetail forward_detailed(const MapperParams& params, const FeatureMatrix& inputs) {
  ForwardCache cache = run_forward(params, inputs);
  ForwardDetail detail;
  detail.output = std::move(cache.output);
  for (LayerCache& layer : cache.layers) detail.attention.push_back(std::move(layer.attn));
  return detail;
}

double cosine_loss(const Vector& predicted, const Vector& target) {
  return cosine_distance(predicted, target);
}

BackwardResult backward(const MapperParams& params, const TrainingExample& example) {
  const MapperConfig& c = params.config;
  ForwardCache cache = run_forward(params, example.inputs);

  BackwardResult result;
  result.gradients = Vector::Zero(params.flat.size());

  // d cosine_loss / d output = (cos * out_hat - target_hat) / |out|
  const Vector& out = cache.output;
  const double out_norm = out.norm();
  const double target_norm = example.target.norm();
  if (target_norm == 0.0) throw ArgumentError("backward: zero-norm target");
  if (out_norm == 0.0) throw ArgumentError("backward: zero-norm prediction");
  result.loss = cosine_distance(out, example.target);
  const Vector out_hat = out / out_norm;
  const Vector target_hat = example.target / target_norm;
  const double cos = out_hat.dot(target_hat);
  const Vector d_out = (cos * out_hat - target_hat) / out_norm;

  double* gbase = result.gradients.data();
  const double* pbase = params.flat.data();

  if (c.variant == MapperVariant::kMlp) {
    MlpViews<double*> g(gbase, c);
    const MlpViews<const double*> p(pbase, c);
    // output = w2^T act + b2; act = gelu(z1); z1 = w1^T pooled + b1
    g.b2 += d_out;
    g.w2 += cache.act * d_out.transpose();
    const Vector d_act = p.w2 * d_out;
    const Vector d_z1 =
        d_act.array() * cache.z1.unaryExpr([](double v) { return gelu_derivative(v); }).array();
    g.b1 += d_z1;
    g.w1 += cache.pooled * d_z1.transpose();
    return result;
  }

  const int m = example.inputs.frame_count();
  const int d = c.model_dim;
  const int heads = c.heads;
  const int dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  // mean pool backward
  Matrix dx = Matrix::Zero(m, d);
  dx.rowwise() = d_out.transpose() / static_cast<double>(m);

  for (int l = c.layers - 1; l >= 0; --l) {
    const LayerCache& lc = cache.layers[l];
    TfLayer<double*> g(gbase, c, l);
    const TfLayer<const double*> p(pbase, c, l);

    // x_out = x_mid + act * w2 + b2
    g.b2 += dx.colwise().sum().transpose();
    g.w2 += lc.act.transpose() * dx;
    Matrix d_act = dx * p.w2.transpose();
    Matrix d_z1 =
        d_act.array() * lc.z1.unaryExpr([](double v) { return gelu_derivative(v); }).array();
    g.b1 += d_z1.colwise().sum().transpose();
    g.w1 += lc.n2.transpose() * d_z1;
    const Matrix d_n2 = d_z1 * p.w1.transpose();
    Matrix d_x_mid = dx + layernorm_backward(d_n2, lc.x_mid, lc.mu2, lc.inv2, p.ln2_g,
                                             g.ln2_g, g.ln2_b);

    // x_mid = x_in + concat * wo
    g.wo += lc.concat.transpose() * d_x_mid;
    const Matrix d_concat = d_x_mid * p.wo.transpose();

    Matrix d_q(m, d), d_k(m, d), d_v(m, d);
    for (int h = 0; h < heads; ++h) {
      const auto qh = lc.q.middleCols(h * dk, dk);
      const auto kh = lc.k.middleCols(h * dk, dk);
      const auto vh = lc.v.middleCols(h * dk, dk);
      const Matrix& probs = lc.attn[h];
      const auto d_oh = d_concat.middleCols(h * dk, dk);

      const Matrix d_probs = d_oh * vh.transpose();
      d_v.middleCols(h * dk, dk).noalias() = probs.transpose() * d_oh;

      // softmax backward, row-wise
      Matrix d_scores(m, m);
      for (int i = 0; i < m; ++i) {
        const double dot = d_probs.row(i).dot(probs.row(i));
        d_scores.row(i) = probs.row(i).array() * (d_probs.row(i).array() - dot);
      }
      d_scores *= scale;
      d_q.middleCols(h * dk, dk).noalias() = d_scores * kh;
      d_k.middleCols(h * dk, dk).noalias() = d_scores.transpose() * qh;
    }

    g.wq += lc.n1.transpose() * d_q;
    g.wk += lc.n1.transpose() * d_k;
    g.wv += lc.n1.transpose() * d_v;
    const Matrix d_n1 = d_q * p.wq.transpose() + d_k * p.wk.transpose() +
                        d_v * p.wv.transpose();
    dx = d_x_mid +
         layernorm_backward(d_n1, lc.x_in, lc.mu1, lc.inv1, p.ln1_g, g.ln1_g, g.ln1_b);
  }
  return result;
}

TrainReport train(std::vector<TrainingExample>& dataset, MapperParams& params,
                  const TrainConfig& config, const std::vector<TrainingExample>* validation) {
  if (dataset.empty()) throw ArgumentError("train: empty dataset");
  if (config.epochs < 1) throw ArgumentError("train: epochs must be >= 1");
  if (config.batch_size < 1) throw ArgumentError("train: batch_size must be >= 1");
  if (config.learning_rate <= 0) throw ArgumentError("train: learning rate must be > 0");
  for (const TrainingExample& example : dataset) {
    if (example.inputs.dim() != params.config.model_dim)
      throw ArgumentError("train: example dimension does not match model_dim");
    if (example.target.norm() == 0.0) throw ArgumentError("train: zero-norm target");
  }

  const int count = static_cast<int>(dataset.size());
  Rng rng(config.seed);
  std::vector<int> order(count);
  for (int i = 0; i < count; ++i) order[i] = i;

  Vector adam_m = Vector::Zero(params.flat.size());
  Vector adam_v = Vector::Zero(params.flat.size());
  long long step = 0;

  TrainReport report;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // seeded Fisher-Yates shuffle
    for (int i = count - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(i + 1)));
      std::swap(order[i], order[j]);
    }

    double epoch_loss = 0.0;
    for (int start = 0; start < count; start += config.batch_size) {
      const int end = std::min(start + config.batch_size, count);
      Vector grad = Vector::Zero(params.flat.size());
      double batch_loss = 0.0;
      for (int i = start; i < end; ++i) {
        BackwardResult r = backward(params, dataset[order[i]]);
        grad += r.gradients;
        batch_loss += r.loss;
      }
      if (!std::isfinite(batch_loss))
        throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch));
      epoch_loss += batch_loss;
      grad /= static_cast<double>(end - start);

      if (config.optimizer == OptimizerKind::kSgd) {
        params.flat -= config.learning_rate * grad;
      } else {
        ++step;
        adam_m = config.adam_beta1 * adam_m + (1.0 - config.adam_beta1) * grad;
        adam_v = config.adam_beta2 * adam_v.array() +
                 (1.0 - config.adam_beta2) * grad.array().square();
        const double mc = 1.0 - std::pow(config.adam_beta1, static_cast<double>(step));
        const double vc = 1.0 - std::pow(config.adam_beta2, static_cast<double>(step));
        params.flat.array() -=
            config.learning_rate * (adam_m.array() / mc) /
            ((adam_v.array() / vc).sqrt() + config.adam_epsilon);
      }
    }
    report.train_loss.push_back(epoch_loss / count);

    if (validation && !validation->empty()) {
      double val_loss = 0.0;
      for (const TrainingExample& example : *validation)
        val_loss += cosine_loss(forward(params, example.inputs), example.target);
      report.validation_loss.push_back(val_loss / static_cast<double>(validation->size()));
    }
  }
  return report;
}

GradCheckResult gradient_check(const MapperParams& params, const TrainingExample& example,
                               double step) {
  const BackwardResult analytic = backward(params, example);

  MapperParams probe = params;
  GradCheckResult result;
  for (Eigen::Index i = 0; i < probe.flat.size(); ++i) {
    const double saved = probe.flat(i);
    probe.flat(i) = saved + step;
    const double loss_plus = cosine_loss(forward(probe, example.inputs), example.target);
    probe.flat(i) = saved - step;
    const double loss_minus = cosine_loss(forward(probe, example.inputs), example.target);
    probe.flat(i) = saved;

    const double fd = (loss_plus - loss_minus) / (2.0 * step);
    const double a = analytic.gradients(i);
    const double rel = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_index = static_cast<std::size_t>(i);
    }
  }
  return result;
}

namespace {
constexpr char kModelMagic[4] = {'S', 'M', 'S', 'M'};
constexpr std::uint32_t kModelVersion = 1;
}  // namespace

std::string to_string(MapperVariant variant) {
  return variant == MapperVariant::kTransformer ? "transformer" : "mlp";
}

MapperVariant mapper_variant_from_string(const std::string& name) {
  if (name == "transformer") return MapperVariant::kTransformer;
  if (name == "mlp") return MapperVariant::kMlp;
  throw ArgumentError("unknown mapper variant: " + name);
}

void save_params(const std::filesystem::path& path, const MapperParams& params) {
  nlohmann::json header{{"variant", to_string(params.config.variant)},
                        {"model_dim", params.config.model_dim},
                        {"layers", params.config.layers},
                        {"heads", params.config.heads},
                        {"ffn_dim", params.config.ffn_dim},
                        {"hidden_dim", params.config.hidden_dim},
                        {"param_count", params.param_count()}};
  const std::string header_text = header.dump();

  std::string bytes;
  bytes.reserve(12 + header_text.size() + params.param_count() * 8);
  bytes.append(kModelMagic, 4);
  binio::put_u32(bytes, kModelVersion);
  binio::put_u32(bytes, static_cast<std::uint32_t>(header_text.size()));
  bytes += header_text;
  for (Eigen::Index i = 0; i < params.flat.size(); ++i) binio::put_f64(bytes, params.flat(i));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

MapperParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < 12) throw FormatError("model file too short: " + path.string());
  if (std::memcmp(bytes.data(), kModelMagic, 4) != 0)
    throw FormatError("bad magic in model file: " + path.string());
  if (binio::get_u32(bytes.data() + 4) != kModelVersion)
    throw FormatError("unsupported model file version: " + path.string());
  const std::uint32_t header_len = binio::get_u32(bytes.data() + 8);
  if (bytes.size() < 12 + static_cast<std::size_t>(header_len))
    throw FormatError("model file truncated header: " + path.string());

  MapperParams params;
  try {
    nlohmann::json header = nlohmann::json::parse(
        bytes.begin() + 12, bytes.begin() + 12 + header_len);
    params.config.variant = mapper_variant_from_string(header.at("variant").get<std::string>());
    params.config.model_dim = header.at("model_dim").get<int>();
    params.config.layers = header.at("layers").get<int>();
    params.config.heads = header.at("heads").get<int>();
    params.config.ffn_dim = header.at("ffn_dim").get<int>();
    params.config.hidden_dim = header.at("hidden_dim").get<int>();
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError("bad model header: " + std::string(ex.what()));
  }
  params.config.validate();

  const std::size_t expected = mapper_param_count(params.config);
  if (bytes.size() != 12 + header_len + expected * 8)
    throw FormatError("model file payload size mismatch: " + path.string());

  params.flat.resize(static_cast<Eigen::Index>(expected));
  const char* p = bytes.data() + 12 + header_len;
  for (std::size_t i = 0; i < expected; ++i, p += 8) {
    params.flat(static_cast<Eigen::Index>(i)) = binio::get_f64(p);
    if (!std::isfinite(params.flat(static_cast<Eigen::Index>(i))))
      throw DataError("non-finite parameter in model file: " + path.string());
  }
  return params;
}

}  // namespace sms
