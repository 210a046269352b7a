#include "penrec/network.hpp"

#include <algorithm>
#include <cmath>

#include "penrec/parallel.hpp"
#include "penrec/rng.hpp"

namespace penrec {

namespace {

constexpr double kBnMomentum = 0.99;
constexpr double kBnEps = 1e-3;

using Mat = Eigen::MatrixXd;
using RowArr = Eigen::Array<double, 1, Eigen::Dynamic>;

void mask_rows(Mat& m, int valid) {
  if (valid < m.rows()) m.bottomRows(m.rows() - valid).setZero();
}

// Counter-based dropout: the keep decision for unit (t, c) of batch slot
// `slot` at layer `layer` depends only on these coordinates and the seed, so
// masks survive padding changes and are recomputable in the backward pass.
std::uint64_t dropout_stream(std::uint64_t seed, std::size_t layer, int slot) {
  return mix_seed(seed, static_cast<std::uint64_t>(layer) + 1,
                  static_cast<std::uint64_t>(slot));
}

double dropout_draw(std::uint64_t stream, int t, int c, int channels) {
  auto pos = static_cast<std::uint64_t>(t) * static_cast<std::uint64_t>(channels) +
             static_cast<std::uint64_t>(c);
  return hash_uniform(stream ^ pos);
}

Mat im2col(const Mat& x, int kernel) {
  const int T = static_cast<int>(x.rows());
  const int cin = static_cast<int>(x.cols());
  const int pad = (kernel - 1) / 2;
  Mat m = Mat::Zero(T, static_cast<Eigen::Index>(kernel) * cin);
  for (int j = 0; j < kernel; ++j) {
    int lo = std::max(0, pad - j);
    int hi = std::min(T, T + pad - j);
    if (hi > lo) m.block(lo, j * cin, hi - lo, cin) = x.middleRows(lo + j - pad, hi - lo);
  }
  return m;
}

// Scatter-add of the im2col gradient back onto input rows.
void col2im_add(const Mat& dm, int kernel, Mat& dx) {
  const int T = static_cast<int>(dx.rows());
  const int cin = static_cast<int>(dx.cols());
  const int pad = (kernel - 1) / 2;
  for (int j = 0; j < kernel; ++j) {
    int lo = std::max(0, pad - j);
    int hi = std::min(T, T + pad - j);
    if (hi > lo) dx.middleRows(lo + j - pad, hi - lo) += dm.block(lo, j * cin, hi - lo, cin);
  }
}

struct LstmCache {
  Mat x;      // input slice fed to this direction (already reversed for bw)
  Mat gates;  // L x 4U, post-activation, gate order i,f,g,o
  Mat c;      // L x U cell states
  Mat h;      // L x U hidden states
};

void run_lstm(const Mat& x, const Mat& w, const Mat& r, const Mat& bias, LstmCache& cc) {
  const int L = static_cast<int>(x.rows());
  const int U = static_cast<int>(r.rows());
  cc.x = x;
  cc.gates.resize(L, 4 * U);
  cc.c.resize(L, U);
  cc.h.resize(L, U);

  Mat z_in = x * w;
  RowArr h = RowArr::Zero(U);
  RowArr c = RowArr::Zero(U);
  for (int t = 0; t < L; ++t) {
    RowArr z = (z_in.row(t) + h.matrix() * r + bias).array();
    RowArr gi = 1.0 / (1.0 + (-z.segment(0, U)).exp());
    RowArr gf = 1.0 / (1.0 + (-z.segment(U, U)).exp());
    RowArr gg = z.segment(2 * U, U).tanh();
    RowArr go = 1.0 / (1.0 + (-z.segment(3 * U, U)).exp());
    c = gf * c + gi * gg;
    h = go * c.tanh();
    cc.gates.row(t).segment(0, U) = gi;
    cc.gates.row(t).segment(U, U) = gf;
    cc.gates.row(t).segment(2 * U, U) = gg;
    cc.gates.row(t).segment(3 * U, U) = go;
    cc.c.row(t) = c;
    cc.h.row(t) = h;
  }
}

void lstm_backward(const LstmCache& cc, const Mat& w, const Mat& r, const Mat& grad_h, Mat& dx,
                   Mat& dw, Mat& dr, Mat& db) {
  const int L = static_cast<int>(cc.x.rows());
  const int U = static_cast<int>(r.rows());

  Mat dz(L, 4 * U);
  RowArr dh_carry = RowArr::Zero(U);
  RowArr dc_carry = RowArr::Zero(U);
  for (int t = L - 1; t >= 0; --t) {
    RowArr gi = cc.gates.row(t).segment(0, U).array();
    RowArr gf = cc.gates.row(t).segment(U, U).array();
    RowArr gg = cc.gates.row(t).segment(2 * U, U).array();
    RowArr go = cc.gates.row(t).segment(3 * U, U).array();
    RowArr tc = cc.c.row(t).array().tanh();
    RowArr c_prev = t > 0 ? RowArr(cc.c.row(t - 1).array()) : RowArr::Zero(U);

    RowArr dh = grad_h.row(t).array() + dh_carry;
    RowArr d_o = dh * tc;
    RowArr dc = dc_carry + dh * go * (1.0 - tc.square());
    RowArr di = dc * gg;
    RowArr dg = dc * gi;
    RowArr df = dc * c_prev;
    dc_carry = dc * gf;

    dz.row(t).segment(0, U) = di * gi * (1.0 - gi);
    dz.row(t).segment(U, U) = df * gf * (1.0 - gf);
    dz.row(t).segment(2 * U, U) = dg * (1.0 - gg.square());
    dz.row(t).segment(3 * U, U) = d_o * go * (1.0 - go);
    dh_carry = (dz.row(t) * r.transpose()).array();
  }

  dw += cc.x.transpose() * dz;
  Mat h_prev = Mat::Zero(L, U);
  if (L > 1) h_prev.bottomRows(L - 1) = cc.h.topRows(L - 1);
  dr += h_prev.transpose() * dz;
  db += dz.colwise().sum();
  dx = dz * w.transpose();
}

// Orthogonal rows: QR of a Gaussian (4U x U), sign-fixed, transposed.
Mat orthogonal_rows(int rows, int cols, Rng& rng) {
  Mat a(cols, rows);
  for (int i = 0; i < cols; ++i)
    for (int j = 0; j < rows; ++j) a(i, j) = rng.normal();
  Eigen::HouseholderQR<Mat> qr(a);
  Mat q = qr.householderQ() * Mat::Identity(cols, rows);
  Mat rmat = qr.matrixQR().topRows(rows);
  for (int j = 0; j < rows; ++j)
    if (rmat(j, j) < 0.0) q.col(j) = -q.col(j);
  return q.transpose();
}

void fill_glorot(Mat& m, double fan_in, double fan_out, Rng& rng) {
  double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-limit, limit);
}

// Per-kind 1-based counters give parameter tensors stable readable names.
struct LayerNames {
  std::vector<std::string> prefix;  // empty for parameterless layers

  explicit LayerNames(const ModelSpec& spec) {
    int conv = 0, bn = 0, blstm = 0, dense = 0;
    prefix.reserve(spec.layers.size());
    for (const auto& layer : spec.layers) {
      switch (layer.kind) {
        case LayerKind::Conv1d:
          prefix.push_back("conv" + std::to_string(++conv));
          break;
        case LayerKind::BatchNorm:
          prefix.push_back("bn" + std::to_string(++bn));
          break;
        case LayerKind::Blstm:
          prefix.push_back("blstm" + std::to_string(++blstm));
          break;
        case LayerKind::Dense:
          prefix.push_back("dense" + std::to_string(++dense));
          break;
        default:
          prefix.emplace_back();
          break;
      }
    }
  }
};

}  // namespace

struct ForwardCache {
  std::uint64_t seed = 0;
  int batch_size = 0;

  struct Layer {
    std::vector<Mat> input;  // only for kinds whose backward needs it
    std::vector<int> valid_in;
    Eigen::RowVectorXd bn_mean, bn_inv_std;
    double bn_count = 0.0;
    std::vector<Eigen::MatrixXi> pool_argmax;
    std::vector<int> pool_in_rows;
    std::vector<LstmCache> fw, bw;
    std::vector<Mat> probs;
  };
  std::vector<Layer> layers;
  std::vector<int> final_valid;
};

LayerSpec LayerSpec::conv1d(int filters, int kernel) {
  LayerSpec s;
  s.kind = LayerKind::Conv1d;
  s.filters = filters;
  s.kernel = kernel;
  return s;
}
LayerSpec LayerSpec::batchnorm() { return {LayerKind::BatchNorm}; }
LayerSpec LayerSpec::relu() { return {LayerKind::Relu}; }
LayerSpec LayerSpec::tanh() { return {LayerKind::Tanh}; }
LayerSpec LayerSpec::maxpool2() { return {LayerKind::MaxPool2}; }
LayerSpec LayerSpec::dropout(double rate) {
  LayerSpec s;
  s.kind = LayerKind::Dropout;
  s.rate = rate;
  return s;
}
LayerSpec LayerSpec::blstm(int units) {
  LayerSpec s;
  s.kind = LayerKind::Blstm;
  s.units = units;
  return s;
}
LayerSpec LayerSpec::dense(int units) {
  LayerSpec s;
  s.kind = LayerKind::Dense;
  s.units = units;
  return s;
}
LayerSpec LayerSpec::softmax() { return {LayerKind::Softmax}; }

ModelSpec build_model(const std::string& name) {
  ModelSpec spec;
  spec.name = name;
  spec.input_channels = 13;
  spec.output_classes = 53;
  auto& L = spec.layers;

  auto conv_block = [&L](int filters, int kernel) {
    L.push_back(LayerSpec::conv1d(filters, kernel));
    L.push_back(LayerSpec::batchnorm());
    L.push_back(LayerSpec::relu());
    L.push_back(LayerSpec::maxpool2());
    L.push_back(LayerSpec::dropout(0.3));
  };

  if (name == "cnn") {
    conv_block(1024, 5);
    conv_block(512, 3);
    conv_block(256, 3);
    conv_block(128, 3);
  } else if (name == "cldnn") {
    conv_block(512, 5);
    conv_block(256, 3);
    conv_block(128, 3);
    L.push_back(LayerSpec::blstm(64));
    L.push_back(LayerSpec::dropout(0.3));
    L.push_back(LayerSpec::blstm(64));
    L.push_back(LayerSpec::dropout(0.3));
  } else {
    throw ConfigError("unknown model \"" + name + "\" (expected cnn or cldnn)");
  }
  L.push_back(LayerSpec::dense(100));
  L.push_back(LayerSpec::relu());
  L.push_back(LayerSpec::dropout(0.3));
  L.push_back(LayerSpec::dense(spec.output_classes));
  L.push_back(LayerSpec::softmax());
  return spec;
}

long long param_count(const ModelSpec& spec) {
  long long count = 0;
  long long c = spec.input_channels;
  for (const auto& layer : spec.layers) {
    switch (layer.kind) {
      case LayerKind::Conv1d:
        count += static_cast<long long>(layer.kernel) * c * layer.filters + layer.filters;
        c = layer.filters;
        break;
      case LayerKind::BatchNorm:
        count += 2 * c;  // scale + shift; running stats are not trainable
        break;
      case LayerKind::Blstm: {
        long long u = layer.units;
        count += 2 * (4 * (u * (c + u) + u));
        c = 2 * u;
        break;
      }
      case LayerKind::Dense:
        count += c * layer.units + layer.units;
        c = layer.units;
        break;
      default:
        break;
    }
  }
  return count;
}

int num_pools(const ModelSpec& spec) {
  int n = 0;
  for (const auto& layer : spec.layers)
    if (layer.kind == LayerKind::MaxPool2) ++n;
  return n;
}

int min_input_length(const ModelSpec& spec) { return 1 << num_pools(spec); }

int output_length(const ModelSpec& spec, int T) {
  if (T < min_input_length(spec))
    throw DataError("input length " + std::to_string(T) + " too short for " + spec.name +
                    " (needs >= " + std::to_string(min_input_length(spec)) + ")");
  int t = T;
  for (const auto& layer : spec.layers)
    if (layer.kind == LayerKind::MaxPool2) t /= 2;
  return t;
}

Eigen::MatrixXd& ParameterStore::at(const std::string& name) {
  int i = index_of(name);
  if (i < 0) throw Error("no parameter tensor named " + name);
  return tensors[static_cast<std::size_t>(i)].value;
}

const Eigen::MatrixXd& ParameterStore::at(const std::string& name) const {
  int i = index_of(name);
  if (i < 0) throw Error("no parameter tensor named " + name);
  return tensors[static_cast<std::size_t>(i)].value;
}

int ParameterStore::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < tensors.size(); ++i)
    if (tensors[i].name == name) return static_cast<int>(i);
  return -1;
}

long long ParameterStore::trainable_count() const {
  long long n = 0;
  for (const auto& t : tensors)
    if (t.trainable) n += t.value.size();
  return n;
}

ParameterStore make_param_store(const ModelSpec& spec) {
  ParameterStore store;
  LayerNames names(spec);
  int c = spec.input_channels;
  auto add = [&store](const std::string& name, Eigen::Index rows, Eigen::Index cols,
                      bool trainable) {
    store.tensors.push_back({name, Mat::Zero(rows, cols), trainable});
  };

  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const auto& layer = spec.layers[li];
    const auto& p = names.prefix[li];
    switch (layer.kind) {
      case LayerKind::Conv1d:
        add(p + ".kernel", static_cast<Eigen::Index>(layer.kernel) * c, layer.filters, true);
        add(p + ".bias", 1, layer.filters, true);
        c = layer.filters;
        break;
      case LayerKind::BatchNorm:
        add(p + ".gamma", 1, c, true);
        add(p + ".beta", 1, c, true);
        add(p + ".running_mean", 1, c, false);
        add(p + ".running_var", 1, c, false);
        break;
      case LayerKind::Blstm: {
        int u = layer.units;
        for (const char* dir : {".fw", ".bw"}) {
          add(p + dir + ".kernel", c, 4 * u, true);
          add(p + dir + ".recurrent", u, 4 * u, true);
          add(p + dir + ".bias", 1, 4 * u, true);
        }
        c = 2 * u;
        break;
      }
      case LayerKind::Dense:
        add(p + ".kernel", c, layer.units, true);
        add(p + ".bias", 1, layer.units, true);
        c = layer.units;
        break;
      default:
        break;
    }
  }
  return store;
}

ParameterStore init_params(const ModelSpec& spec, std::uint64_t seed) {
  ParameterStore store = make_param_store(spec);
  LayerNames names(spec);
  // One generator per tensor, keyed by its position, so adding a layer never
  // perturbs the values of unrelated tensors.
  auto rng_for = [&store, seed](const std::string& name) {
    return Rng(mix_seed(seed, static_cast<std::uint64_t>(store.index_of(name))));
  };

  int c = spec.input_channels;
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const auto& layer = spec.layers[li];
    const auto& p = names.prefix[li];
    switch (layer.kind) {
      case LayerKind::Conv1d: {
        Rng rng = rng_for(p + ".kernel");
        fill_glorot(store.at(p + ".kernel"), static_cast<double>(layer.kernel) * c,
                    static_cast<double>(layer.kernel) * layer.filters, rng);
        c = layer.filters;
        break;
      }
      case LayerKind::BatchNorm:
        store.at(p + ".gamma").setOnes();
        store.at(p + ".running_var").setOnes();
        break;
      case LayerKind::Blstm: {
        const int u = layer.units;
        for (const char* dir : {".fw", ".bw"}) {
          Rng krng = rng_for(p + dir + ".kernel");
          fill_glorot(store.at(p + dir + ".kernel"), c, 4.0 * u, krng);
          Rng rrng = rng_for(p + dir + ".recurrent");
          store.at(p + dir + ".recurrent") = orthogonal_rows(u, 4 * u, rrng);
          store.at(p + dir + ".bias").block(0, u, 1, u).setOnes();  // forget gate opens at init
        }
        c = 2 * u;
        break;
      }
      case LayerKind::Dense: {
        Rng rng = rng_for(p + ".kernel");
        fill_glorot(store.at(p + ".kernel"), c, layer.units, rng);
        c = layer.units;
        break;
      }
      default:
        break;
    }
  }
  return store;
}

Gradients zero_gradients(const ParameterStore& params) {
  Gradients g;
  g.tensors.resize(params.tensors.size());
  for (std::size_t i = 0; i < params.tensors.size(); ++i)
    if (params.tensors[i].trainable)
      g.tensors[i] = Mat::Zero(params.tensors[i].value.rows(), params.tensors[i].value.cols());
  return g;
}

ForwardResult forward(const ModelSpec& spec, ParameterStore& params, const Batch& batch,
                      RunMode mode, std::uint64_t seed, int threads) {
  const int B = batch.size();
  if (B == 0) throw DataError("empty batch");
  const int total_T = batch.padded_length();
  for (int b = 0; b < B; ++b) {
    if (batch.values[static_cast<std::size_t>(b)].rows() != total_T ||
        batch.values[static_cast<std::size_t>(b)].cols() != spec.input_channels)
      throw DataError("batch member " + std::to_string(b) + " has wrong shape");
    int v = batch.valid_lengths[static_cast<std::size_t>(b)];
    if (v < 1 || v > total_T)
      throw DataError("batch member " + std::to_string(b) + " has bad valid length");
    if (v < min_input_length(spec))
      throw DataError("batch member " + std::to_string(b) + " is shorter than 2^(#pools) = " +
                      std::to_string(min_input_length(spec)));
  }

  const bool train = mode == RunMode::Train;
  LayerNames names(spec);
  auto cache = train ? std::make_shared<ForwardCache>() : nullptr;
  if (cache) {
    cache->seed = seed;
    cache->batch_size = B;
    cache->layers.resize(spec.layers.size());
  }

  std::vector<Mat> acts = batch.values;
  std::vector<int> valid = batch.valid_lengths;
  for (int b = 0; b < B; ++b) mask_rows(acts[static_cast<std::size_t>(b)], valid[static_cast<std::size_t>(b)]);

  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const LayerSpec& layer = spec.layers[li];
    ForwardCache::Layer* lc = cache ? &cache->layers[li] : nullptr;
    if (lc) lc->valid_in = valid;

    switch (layer.kind) {
      case LayerKind::Conv1d: {
        const Mat& w = params.at(names.prefix[li] + ".kernel");
        const Mat& bias = params.at(names.prefix[li] + ".bias");
        if (lc) lc->input = acts;
        parallel_for(B, threads, [&](int b) {
          auto& x = acts[static_cast<std::size_t>(b)];
          Mat y = im2col(x, layer.kernel) * w;
          y.rowwise() += bias.row(0);
          mask_rows(y, valid[static_cast<std::size_t>(b)]);
          x = std::move(y);
        });
        break;
      }

      case LayerKind::BatchNorm: {
        const std::string& p = names.prefix[li];
        const Mat& gamma = params.at(p + ".gamma");
        const Mat& beta = params.at(p + ".beta");
        const int C = static_cast<int>(acts[0].cols());
        Eigen::RowVectorXd mean(C), var(C);

        if (train) {
          double n = 0.0;
          Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(C);
          for (int b = 0; b < B; ++b) {
            int v = valid[static_cast<std::size_t>(b)];
            sum += acts[static_cast<std::size_t>(b)].topRows(v).colwise().sum();
            n += v;
          }
          mean = sum / n;
          Eigen::RowVectorXd sq = Eigen::RowVectorXd::Zero(C);
          for (int b = 0; b < B; ++b) {
            int v = valid[static_cast<std::size_t>(b)];
            sq += (acts[static_cast<std::size_t>(b)].topRows(v).rowwise() - mean)
                      .array()
                      .square()
                      .colwise()
                      .sum()
                      .matrix();
          }
          var = sq / n;  // biased, over valid frames only
          Mat& rmean = params.at(p + ".running_mean");
          Mat& rvar = params.at(p + ".running_var");
          rmean.row(0) = kBnMomentum * rmean.row(0) + (1.0 - kBnMomentum) * mean;
          rvar.row(0) = kBnMomentum * rvar.row(0) + (1.0 - kBnMomentum) * var;
          if (lc) lc->bn_count = n;
        } else {
          mean = params.at(p + ".running_mean").row(0);
          var = params.at(p + ".running_var").row(0);
        }

        Eigen::RowVectorXd inv_std = (var.array() + kBnEps).rsqrt();
        if (lc) {
          lc->input = acts;
          lc->bn_mean = mean;
          lc->bn_inv_std = inv_std;
        }
        Eigen::RowVectorXd scale = inv_std.cwiseProduct(gamma.row(0));
        Eigen::RowVectorXd shift = beta.row(0) - mean.cwiseProduct(scale);
        parallel_for(B, threads, [&](int b) {
          auto& x = acts[static_cast<std::size_t>(b)];
          x = (x.array().rowwise() * scale.array()).rowwise() + shift.array();
          mask_rows(x, valid[static_cast<std::size_t>(b)]);
        });
        break;
      }

      case LayerKind::Relu:
        if (lc) lc->input = acts;
        for (auto& x : acts) x = x.cwiseMax(0.0);
        break;

      case LayerKind::Tanh:
        if (lc) lc->input = acts;
        for (auto& x : acts) x = x.array().tanh();
        break;

      case LayerKind::MaxPool2: {
        if (lc) {
          lc->pool_argmax.resize(static_cast<std::size_t>(B));
          lc->pool_in_rows.resize(static_cast<std::size_t>(B));
        }
        parallel_for(B, threads, [&](int b) {
          const Mat& x = acts[static_cast<std::size_t>(b)];
          const int t_in = static_cast<int>(x.rows());
          const int t_out = t_in / 2;
          const int C = static_cast<int>(x.cols());
          Mat y(t_out, C);
          Eigen::MatrixXi arg(t_out, C);
          for (int t = 0; t < t_out; ++t) {
            for (int c = 0; c < C; ++c) {
              double a = x(2 * t, c), bb = x(2 * t + 1, c);
              if (a >= bb) {
                y(t, c) = a;
                arg(t, c) = 2 * t;
              } else {
                y(t, c) = bb;
                arg(t, c) = 2 * t + 1;
              }
            }
          }
          int v_out = valid[static_cast<std::size_t>(b)] / 2;
          mask_rows(y, v_out);
          if (lc) {
            lc->pool_argmax[static_cast<std::size_t>(b)] = std::move(arg);
            lc->pool_in_rows[static_cast<std::size_t>(b)] = t_in;
          }
          acts[static_cast<std::size_t>(b)] = std::move(y);
        });
        for (auto& v : valid) v /= 2;
        break;
      }

      case LayerKind::Dropout: {
        if (!train) break;
        const double rate = layer.rate;
        const double scale = 1.0 / (1.0 - rate);
        parallel_for(B, threads, [&](int b) {
          Mat& x = acts[static_cast<std::size_t>(b)];
          const int C = static_cast<int>(x.cols());
          std::uint64_t stream = dropout_stream(seed, li, b);
          int v = valid[static_cast<std::size_t>(b)];
          for (int t = 0; t < v; ++t)
            for (int c = 0; c < C; ++c)
              x(t, c) = dropout_draw(stream, t, c, C) < rate ? 0.0 : x(t, c) * scale;
        });
        break;
      }

      case LayerKind::Blstm: {
        const std::string& p = names.prefix[li];
        const Mat& wf = params.at(p + ".fw.kernel");
        const Mat& rf = params.at(p + ".fw.recurrent");
        const Mat& bf = params.at(p + ".fw.bias");
        const Mat& wb = params.at(p + ".bw.kernel");
        const Mat& rb = params.at(p + ".bw.recurrent");
        const Mat& bb = params.at(p + ".bw.bias");
        const int U = layer.units;
        if (lc) {
          lc->fw.resize(static_cast<std::size_t>(B));
          lc->bw.resize(static_cast<std::size_t>(B));
        }
        parallel_for(B, threads, [&](int b) {
          const Mat& x = acts[static_cast<std::size_t>(b)];
          const int v = valid[static_cast<std::size_t>(b)];
          Mat xv = x.topRows(v);
          LstmCache local_f, local_b;
          LstmCache& cf = lc ? lc->fw[static_cast<std::size_t>(b)] : local_f;
          LstmCache& cb = lc ? lc->bw[static_cast<std::size_t>(b)] : local_b;
          run_lstm(xv, wf, rf, bf, cf);
          run_lstm(Mat(xv.colwise().reverse()), wb, rb, bb, cb);
          Mat y = Mat::Zero(x.rows(), 2 * U);
          y.block(0, 0, v, U) = cf.h;
          y.block(0, U, v, U) = cb.h.colwise().reverse();
          acts[static_cast<std::size_t>(b)] = std::move(y);
        });
        break;
      }

      case LayerKind::Dense: {
        const Mat& w = params.at(names.prefix[li] + ".kernel");
        const Mat& bias = params.at(names.prefix[li] + ".bias");
        if (lc) lc->input = acts;
        parallel_for(B, threads, [&](int b) {
          Mat& x = acts[static_cast<std::size_t>(b)];
          Mat y = x * w;
          y.rowwise() += bias.row(0);
          mask_rows(y, valid[static_cast<std::size_t>(b)]);
          x = std::move(y);
        });
        break;
      }

      case LayerKind::Softmax: {
        if (lc) lc->probs.resize(static_cast<std::size_t>(B));
        parallel_for(B, threads, [&](int b) {
          Mat& x = acts[static_cast<std::size_t>(b)];
          const int v = valid[static_cast<std::size_t>(b)];
          Mat probs = Mat::Zero(x.rows(), x.cols());
          for (int t = 0; t < v; ++t) {
            double m = x.row(t).maxCoeff();
            double lse = m + std::log((x.row(t).array() - m).exp().sum());
            x.row(t).array() -= lse;
            probs.row(t) = x.row(t).array().exp();
          }
          mask_rows(x, v);
          if (lc) lc->probs[static_cast<std::size_t>(b)] = std::move(probs);
        });
        break;
      }
    }
  }

  ForwardResult result;
  result.log_probs = std::move(acts);
  result.valid_out_lengths = valid;
  if (cache) cache->final_valid = valid;
  result.cache = cache;
  return result;
}

Gradients backward(const ModelSpec& spec, const ParameterStore& params, const ForwardCache& cache,
                   const std::vector<Eigen::MatrixXd>& grad_log_probs, int threads) {
  if (cache.layers.size() != spec.layers.size())
    throw Error("forward cache does not match this model");
  const int B = cache.batch_size;
  if (static_cast<int>(grad_log_probs.size()) != B)
    throw Error("grad_log_probs batch size mismatch");

  LayerNames names(spec);
  Gradients grads = zero_gradients(params);
  auto gidx = [&params](const std::string& name) {
    int i = params.index_of(name);
    if (i < 0) throw Error("no parameter tensor named " + name);
    return static_cast<std::size_t>(i);
  };

  std::vector<Mat> g = grad_log_probs;
  for (int b = 0; b < B; ++b) mask_rows(g[static_cast<std::size_t>(b)], cache.final_valid[static_cast<std::size_t>(b)]);

  for (int li = static_cast<int>(spec.layers.size()) - 1; li >= 0; --li) {
    const LayerSpec& layer = spec.layers[static_cast<std::size_t>(li)];
    const auto& lc = cache.layers[static_cast<std::size_t>(li)];
    const std::string& p = names.prefix[static_cast<std::size_t>(li)];

    switch (layer.kind) {
      case LayerKind::Softmax: {
        parallel_for(B, threads, [&](int b) {
          Mat& gb = g[static_cast<std::size_t>(b)];
          const Mat& probs = lc.probs[static_cast<std::size_t>(b)];
          const int v = lc.valid_in[static_cast<std::size_t>(b)];
          for (int t = 0; t < v; ++t) {
            double s = gb.row(t).sum();
            gb.row(t) -= s * probs.row(t);
          }
          mask_rows(gb, v);
        });
        break;
      }

      case LayerKind::Dense: {
        const Mat& w = params.at(p + ".kernel");
        Mat& dw = grads.tensors[gidx(p + ".kernel")];
        Mat& db = grads.tensors[gidx(p + ".bias")];
        for (int b = 0; b < B; ++b) {
          const Mat& x = lc.input[static_cast<std::size_t>(b)];
          const Mat& gb = g[static_cast<std::size_t>(b)];
          dw += x.transpose() * gb;
          db += gb.colwise().sum();
        }
        parallel_for(B, threads, [&](int b) {
          Mat gx = g[static_cast<std::size_t>(b)] * w.transpose();
          mask_rows(gx, lc.valid_in[static_cast<std::size_t>(b)]);
          g[static_cast<std::size_t>(b)] = std::move(gx);
        });
        break;
      }

      case LayerKind::Dropout: {
        const double rate = layer.rate;
        const double scale = 1.0 / (1.0 - rate);
        parallel_for(B, threads, [&](int b) {
          Mat& gb = g[static_cast<std::size_t>(b)];
          const int C = static_cast<int>(gb.cols());
          std::uint64_t stream = dropout_stream(cache.seed, static_cast<std::size_t>(li), b);
          const int v = lc.valid_in[static_cast<std::size_t>(b)];
          for (int t = 0; t < v; ++t)
            for (int c = 0; c < C; ++c)
              gb(t, c) = dropout_draw(stream, t, c, C) < rate ? 0.0 : gb(t, c) * scale;
          mask_rows(gb, v);
        });
        break;
      }

      case LayerKind::Relu: {
        parallel_for(B, threads, [&](int b) {
          const Mat& x = lc.input[static_cast<std::size_t>(b)];
          g[static_cast<std::size_t>(b)] =
              (x.array() > 0.0).select(g[static_cast<std::size_t>(b)], 0.0);
        });
        break;
      }

      case LayerKind::Tanh: {
        parallel_for(B, threads, [&](int b) {
          const Mat& x = lc.input[static_cast<std::size_t>(b)];
          g[static_cast<std::size_t>(b)].array() *= 1.0 - x.array().tanh().square();
        });
        break;
      }

      case LayerKind::MaxPool2: {
        parallel_for(B, threads, [&](int b) {
          const Mat& gb = g[static_cast<std::size_t>(b)];
          const auto& arg = lc.pool_argmax[static_cast<std::size_t>(b)];
          const int t_in = lc.pool_in_rows[static_cast<std::size_t>(b)];
          const int C = static_cast<int>(gb.cols());
          const int v_out = lc.valid_in[static_cast<std::size_t>(b)] / 2;
          Mat gx = Mat::Zero(t_in, C);
          for (int t = 0; t < v_out; ++t)
            for (int c = 0; c < C; ++c) gx(arg(t, c), c) += gb(t, c);
          g[static_cast<std::size_t>(b)] = std::move(gx);
        });
        break;
      }

      case LayerKind::BatchNorm: {
        const Mat& gamma = params.at(p + ".gamma");
        Mat& dgamma = grads.tensors[gidx(p + ".gamma")];
        Mat& dbeta = grads.tensors[gidx(p + ".beta")];
        const int C = static_cast<int>(g[0].cols());
        const double n = lc.bn_count;

        Eigen::RowVectorXd sum_dxhat = Eigen::RowVectorXd::Zero(C);
        Eigen::RowVectorXd sum_dxhat_xhat = Eigen::RowVectorXd::Zero(C);
        for (int b = 0; b < B; ++b) {
          const int v = lc.valid_in[static_cast<std::size_t>(b)];
          auto gb = g[static_cast<std::size_t>(b)].topRows(v);
          Mat x_hat = (lc.input[static_cast<std::size_t>(b)].topRows(v).rowwise() - lc.bn_mean)
                          .array()
                          .rowwise() *
                      lc.bn_inv_std.array();
          dbeta += gb.colwise().sum();
          dgamma += (gb.array() * x_hat.array()).colwise().sum().matrix();
          sum_dxhat += gb.colwise().sum() * 1.0;  // scaled by gamma below
          sum_dxhat_xhat += (gb.array() * x_hat.array()).colwise().sum().matrix();
        }
        // dx_hat = g * gamma; fold gamma into the channel sums once.
        Eigen::RowVectorXd gvec = gamma.row(0);
        sum_dxhat = sum_dxhat.cwiseProduct(gvec);
        sum_dxhat_xhat = sum_dxhat_xhat.cwiseProduct(gvec);

        parallel_for(B, threads, [&](int b) {
          const int v = lc.valid_in[static_cast<std::size_t>(b)];
          Mat& gb = g[static_cast<std::size_t>(b)];
          Mat x_hat = (lc.input[static_cast<std::size_t>(b)].topRows(v).rowwise() - lc.bn_mean)
                          .array()
                          .rowwise() *
                      lc.bn_inv_std.array();
          Mat dxhat = gb.topRows(v).array().rowwise() * gvec.array();
          Mat dx = ((dxhat.array() * n).rowwise() - sum_dxhat.array()).matrix();
          dx.array() -= x_hat.array().rowwise() * sum_dxhat_xhat.array();
          dx.array().rowwise() *= (lc.bn_inv_std.array() / n);
          gb.setZero();
          gb.topRows(v) = dx;
        });
        break;
      }

      case LayerKind::Conv1d: {
        const Mat& w = params.at(p + ".kernel");
        Mat& dw = grads.tensors[gidx(p + ".kernel")];
        Mat& db = grads.tensors[gidx(p + ".bias")];
        std::vector<Mat> gx(static_cast<std::size_t>(B));
        for (int b = 0; b < B; ++b) {
          const Mat& x = lc.input[static_cast<std::size_t>(b)];
          Mat& gb = g[static_cast<std::size_t>(b)];
          mask_rows(gb, lc.valid_in[static_cast<std::size_t>(b)]);
          Mat m = im2col(x, layer.kernel);
          dw += m.transpose() * gb;
          db += gb.colwise().sum();
          Mat dm = gb * w.transpose();
          Mat dx = Mat::Zero(x.rows(), x.cols());
          col2im_add(dm, layer.kernel, dx);
          mask_rows(dx, lc.valid_in[static_cast<std::size_t>(b)]);
          gx[static_cast<std::size_t>(b)] = std::move(dx);
        }
        g = std::move(gx);
        break;
      }

      case LayerKind::Blstm: {
        const Mat& wf = params.at(p + ".fw.kernel");
        const Mat& rf = params.at(p + ".fw.recurrent");
        const Mat& wb = params.at(p + ".bw.kernel");
        const Mat& rb = params.at(p + ".bw.recurrent");
        Mat& dwf = grads.tensors[gidx(p + ".fw.kernel")];
        Mat& drf = grads.tensors[gidx(p + ".fw.recurrent")];
        Mat& dbf = grads.tensors[gidx(p + ".fw.bias")];
        Mat& dwb = grads.tensors[gidx(p + ".bw.kernel")];
        Mat& drb = grads.tensors[gidx(p + ".bw.recurrent")];
        Mat& dbb = grads.tensors[gidx(p + ".bw.bias")];
        const int U = layer.units;

        for (int b = 0; b < B; ++b) {
          const int v = lc.valid_in[static_cast<std::size_t>(b)];
          Mat& gb = g[static_cast<std::size_t>(b)];
          mask_rows(gb, v);
          Mat gh_f = gb.block(0, 0, v, U);
          Mat gh_b = gb.block(0, U, v, U).colwise().reverse();

          Mat dx_f, dx_r;
          lstm_backward(lc.fw[static_cast<std::size_t>(b)], wf, rf, gh_f, dx_f, dwf, drf, dbf);
          lstm_backward(lc.bw[static_cast<std::size_t>(b)], wb, rb, gh_b, dx_r, dwb, drb, dbb);

          Mat gx = Mat::Zero(gb.rows(), dx_f.cols());
          gx.topRows(v) = dx_f + dx_r.colwise().reverse();
          g[static_cast<std::size_t>(b)] = std::move(gx);
        }
        break;
      }
    }
  }
  return grads;
}

}  // namespace penrec
