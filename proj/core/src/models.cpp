#include "engage/models.hpp"

#include <string>

#include "engage/error.hpp"

namespace engage::models {

using timecond::Projection;
using timecond::ProjectionKind;
using timecond::Strategy;

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::kGamepad: return "gamepad";
    case Modality::kFrames: return "frames";
    case Modality::kFusion: return "fusion";
  }
  return "?";
}

Modality parse_modality(std::string_view s) {
  if (s == "gamepad") return Modality::kGamepad;
  if (s == "frames") return Modality::kFrames;
  if (s == "fusion") return Modality::kFusion;
  throw UsageError("unknown modality '" + std::string(s) + "' (expected gamepad|frames|fusion)");
}

// ---------------------------------------------------------------- structure

std::size_t Stack::dense_parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.parameter_count();
  return n;
}

std::size_t Stack::projection_parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : conditioning) {
    if (p) n += p->parameter_count();
  }
  return n;
}

namespace {

template <typename Fn>
void for_each_stack(const Network& net, Fn&& fn) {
  if (net.gamepad) fn(*net.gamepad);
  if (net.frames) fn(*net.frames);
  fn(net.head);
}

template <typename Fn>
void for_each_stack(Network& net, Fn&& fn) {
  if (net.gamepad) fn(*net.gamepad);
  if (net.frames) fn(*net.frames);
  fn(net.head);
}

template <typename Span, typename StackT>
void collect(StackT& s, std::vector<Span>& out) {
  for (auto& l : s.layers) {
    out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  for (auto& p : s.conditioning) {
    if (!p) continue;
    out.emplace_back(p->weight.data(), static_cast<std::size_t>(p->weight.size()));
    out.emplace_back(p->bias.data(), static_cast<std::size_t>(p->bias.size()));
  }
}

Stack zeros_like(const Stack& s) {
  Stack z = s;
  for (auto& l : z.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  for (auto& p : z.conditioning) {
    if (p) {
      p->weight.setZero();
      p->bias.setZero();
    }
  }
  return z;
}

}  // namespace

std::size_t Network::dense_parameter_count() const {
  std::size_t n = 0;
  for_each_stack(*this, [&](const Stack& s) { n += s.dense_parameter_count(); });
  return n;
}

std::size_t Network::projection_parameter_count() const {
  std::size_t n = 0;
  for_each_stack(*this, [&](const Stack& s) { n += s.projection_parameter_count(); });
  return n;
}

std::size_t Network::parameter_count() const { return dense_parameter_count() + projection_parameter_count(); }

std::vector<std::span<double>> Network::parameters() {
  std::vector<std::span<double>> out;
  for_each_stack(*this, [&](Stack& s) { collect(s, out); });
  return out;
}

std::vector<std::span<const double>> Network::parameters() const {
  std::vector<std::span<const double>> out;
  for_each_stack(*this, [&](const Stack& s) { collect(s, out); });
  return out;
}

Network Network::zeros_like() const {
  Network z;
  z.modality = modality;
  z.strategy = strategy;
  z.embeddings = embeddings;
  if (gamepad) z.gamepad = models::zeros_like(*gamepad);
  if (frames) z.frames = models::zeros_like(*frames);
  z.head = models::zeros_like(head);
  return z;
}

// ---------------------------------------------------------------- builders

namespace {

Stack make_stack(std::vector<nn::DenseLayer> layers) {
  Stack s;
  s.conditioning.resize(layers.size() + 1);
  s.layers = std::move(layers);
  return s;
}

void add_projection(Stack& s, std::size_t slot, ProjectionKind kind, int dim) {
  s.conditioning.at(slot) = Projection::zeros(kind, s.slot_width(slot), dim);
}

void add_all_projections(Stack& s, int dim) {
  for (std::size_t slot = 0; slot < s.conditioning.size(); ++slot) {
    add_projection(s, slot, ProjectionKind::kScaleShift, dim);
  }
}

// Layer-input slots only: the head output (logits) is conditioned once, by the head.
void add_input_projections(Stack& s, int dim) {
  for (std::size_t slot = 0; slot < s.layers.size(); ++slot) {
    add_projection(s, slot, ProjectionKind::kScaleShift, dim);
  }
}

ProjectionKind last_layer_kind(Strategy s) {
  return s == Strategy::kSll ? ProjectionKind::kShift : ProjectionKind::kScaleShift;
}

Network make_network(const ModelConfig& config, Modality modality) {
  Network net;
  net.modality = modality;
  net.strategy = config.conditioning;
  net.embeddings = timecond::EmbeddingTable(config.embedding);
  return net;
}

Stack gamepad_branch(Rng& rng) {
  std::vector<nn::DenseLayer> layers;
  layers.push_back(nn::make_dense(kGamepadInputs, kLatentWidth, nn::Activation::kGelu, 0.0, rng));
  return make_stack(std::move(layers));
}

Stack frames_branch(Rng& rng, double dropout) {
  std::vector<nn::DenseLayer> layers;
  layers.push_back(nn::make_dense(kFrameChannels, kFramesHidden, nn::Activation::kGelu, dropout, rng));
  layers.push_back(nn::make_dense(kFramesHidden, kLatentWidth, nn::Activation::kGelu, dropout, rng));
  return make_stack(std::move(layers));
}

}  // namespace

Network build_gamepad_model(const ModelConfig& config) {
  Rng rng(config.seed);
  auto net = make_network(config, Modality::kGamepad);
  net.gamepad = gamepad_branch(rng);
  std::vector<nn::DenseLayer> head;
  head.push_back(nn::make_dense(kLatentWidth, kClasses, nn::Activation::kLinear, 0.0, rng));
  net.head = make_stack(std::move(head));

  const int dim = config.embedding.dim;
  switch (config.conditioning) {
    case Strategy::kNone: break;
    case Strategy::kSll:
    case Strategy::kSsll:
      // The only hidden layer is the last one, so its input is the raw feature vector.
      add_projection(*net.gamepad, 0, last_layer_kind(config.conditioning), dim);
      break;
    case Strategy::kSsal:
      add_input_projections(*net.gamepad, dim);
      add_all_projections(net.head, dim);
      break;
  }
  return net;
}

Network build_frames_model(const ModelConfig& config) {
  Rng rng(config.seed);
  auto net = make_network(config, Modality::kFrames);
  net.frames = frames_branch(rng, config.dropout);
  std::vector<nn::DenseLayer> head;
  head.push_back(nn::make_dense(kLatentWidth, kClasses, nn::Activation::kLinear, 0.0, rng));
  net.head = make_stack(std::move(head));

  const int dim = config.embedding.dim;
  switch (config.conditioning) {
    case Strategy::kNone: break;
    case Strategy::kSll:
    case Strategy::kSsll:
      add_projection(*net.frames, 1, last_layer_kind(config.conditioning), dim);  // the 128-vector
      break;
    case Strategy::kSsal:
      add_input_projections(*net.frames, dim);  // 512, 128
      add_all_projections(net.head, dim);       // 30, logits
      break;
  }
  return net;
}

Network build_fusion_model(const ModelConfig& config) {
  Rng rng(config.seed);
  auto net = make_network(config, Modality::kFusion);
  net.gamepad = gamepad_branch(rng);
  net.frames = frames_branch(rng, config.dropout);
  std::vector<nn::DenseLayer> head;
  head.push_back(nn::make_dense(2 * kLatentWidth, kFusionHidden, nn::Activation::kGelu, 0.0, rng));
  head.push_back(nn::make_dense(kFusionHidden, kClasses, nn::Activation::kLinear, 0.0, rng));
  net.head = make_stack(std::move(head));

  const int dim = config.embedding.dim;
  switch (config.conditioning) {
    case Strategy::kNone: break;
    case Strategy::kSll:
    case Strategy::kSsll:
      add_projection(net.head, 0, last_layer_kind(config.conditioning), dim);  // the 60-vector
      break;
    case Strategy::kSsal:
      add_input_projections(*net.gamepad, dim);  // 31
      add_input_projections(*net.frames, dim);   // 512, 128
      add_all_projections(net.head, dim);        // 60, 32, logits
      break;
  }
  return net;
}

Network build_model(const ModelConfig& config) {
  switch (config.modality) {
    case Modality::kGamepad: return build_gamepad_model(config);
    case Modality::kFrames: return build_frames_model(config);
    case Modality::kFusion: return build_fusion_model(config);
  }
  throw UsageError("unknown modality");
}

// ---------------------------------------------------------------- forward

namespace {

Matrix stack_forward(const Stack& s, const Matrix& x, std::span<const int> levels,
                     const timecond::EmbeddingTable& table, Mode mode, Rng* rng, StackCache* cache) {
  if (x.rows() != s.input_width()) {
    throw DataError("shape mismatch: stack expects " + std::to_string(s.input_width()) + " inputs, got " +
                    std::to_string(x.rows()));
  }
  if (cache) cache->layers.resize(s.layers.size());
  Matrix h = x;
  for (std::size_t i = 0; i < s.layers.size(); ++i) {
    const auto& layer = s.layers[i];
    Matrix projected;
    Matrix conditioned = s.conditioning[i] ? timecond::condition_batch(*s.conditioning[i], h, levels, table, &projected)
                                           : h;
    Matrix z = layer.weight * conditioned;
    z.colwise() += layer.bias;
    Matrix a = layer.activation == nn::Activation::kGelu ? Matrix(z.unaryExpr([](double v) { return nn::gelu(v); }))
                                                         : z;
    Matrix mask;
    if (mode == Mode::kTrain && layer.dropout > 0.0) {
      if (!rng) throw DataError("training-mode forward requires a generator");
      const double keep_scale = 1.0 / (1.0 - layer.dropout);
      mask.resize(a.rows(), a.cols());
      for (Eigen::Index k = 0; k < mask.size(); ++k) mask.data()[k] = rng->uniform() < layer.dropout ? 0.0 : keep_scale;
      a = a.cwiseProduct(mask);
    }
    if (cache) {
      auto& lc = cache->layers[i];
      lc.input = std::move(h);
      lc.conditioned = std::move(conditioned);
      lc.projected = std::move(projected);
      lc.pre_activation = std::move(z);
      lc.mask = std::move(mask);
    }
    h = std::move(a);
  }
  const auto& out_slot = s.conditioning.back();
  if (out_slot) {
    Matrix projected;
    Matrix out = timecond::condition_batch(*out_slot, h, levels, table, &projected);
    if (cache) {
      cache->output_raw = std::move(h);
      cache->output_projected = std::move(projected);
      cache->output = out;
    }
    return out;
  }
  if (cache) {
    cache->output_raw = h;
    cache->output = h;
  }
  return h;
}

// With `need_input_grad` false the gradient w.r.t. the stack input is not
// formed (branch inputs are data) and an empty matrix is returned.
Matrix stack_backward(const Stack& s, const StackCache& c, const Matrix& grad_out, std::span<const int> levels,
                      const timecond::EmbeddingTable& table, Stack& g, bool need_input_grad = true) {
  Matrix grad = grad_out;
  if (s.conditioning.back()) {
    grad = timecond::condition_batch_backward(*s.conditioning.back(), c.output_raw, c.output_projected, grad, levels,
                                              table, *g.conditioning.back());
  }
  for (std::size_t i = s.layers.size(); i-- > 0;) {
    const auto& layer = s.layers[i];
    const auto& lc = c.layers[i];
    if (lc.mask.size() != 0) grad = grad.cwiseProduct(lc.mask);
    if (layer.activation == nn::Activation::kGelu) {
      grad = grad.cwiseProduct(lc.pre_activation.unaryExpr([](double v) { return nn::gelu_derivative(v); }));
    }
    g.layers[i].weight.noalias() += grad * lc.conditioned.transpose();
    g.layers[i].bias += grad.rowwise().sum();
    if (i == 0 && !need_input_grad && !s.conditioning[0]) return {};
    Matrix grad_in = layer.weight.transpose() * grad;
    if (s.conditioning[i]) {
      grad_in = timecond::condition_batch_backward(*s.conditioning[i], lc.input, lc.projected, grad_in, levels, table,
                                                   *g.conditioning[i]);
    }
    grad = std::move(grad_in);
  }
  return grad;
}

void check_levels(const Batch& batch, Eigen::Index cols) {
  if (static_cast<Eigen::Index>(batch.levels.size()) != cols) throw DataError("batch: level count mismatch");
  for (int t : batch.levels) {
    if (t < 1 || t > timecond::kLevelCount) throw DataError("batch: time level must be 1, 2 or 3");
  }
}

Matrix head_input(const Network& net, const Matrix* gamepad_out, const Matrix* frames_out) {
  if (gamepad_out && frames_out) {
    Matrix joined(gamepad_out->rows() + frames_out->rows(), gamepad_out->cols());
    joined << *gamepad_out, *frames_out;
    return joined;
  }
  if (gamepad_out) return *gamepad_out;
  if (frames_out) return *frames_out;
  (void)net;
  throw DataError("network has no input branch");
}

}  // namespace

ForwardCache forward(const Network& net, const Batch& batch, Mode mode, Rng* rng) {
  ForwardCache cache;
  cache.network = &net;
  cache.generation = net.generation;
  cache.levels = batch.levels;
  const auto B = static_cast<Eigen::Index>(batch.size());
  if (B == 0) throw DataError("empty batch");
  check_levels(batch, B);

  Matrix g_out, f_out;
  if (net.gamepad) {
    if (batch.gamepad.cols() != B || batch.gamepad.rows() != kGamepadInputs) {
      throw DataError("missing or malformed gamepad modality in batch");
    }
    cache.gamepad.emplace();
    g_out = stack_forward(*net.gamepad, batch.gamepad, batch.levels, net.embeddings, mode, rng, &*cache.gamepad);
  }
  if (net.frames) {
    if (batch.frames.cols() != B || batch.frames.rows() != kFrameChannels) {
      throw DataError("missing or malformed frames modality in batch");
    }
    cache.frames.emplace();
    f_out = stack_forward(*net.frames, batch.frames, batch.levels, net.embeddings, mode, rng, &*cache.frames);
  }
  const Matrix h = head_input(net, net.gamepad ? &g_out : nullptr, net.frames ? &f_out : nullptr);
  const Matrix logits = stack_forward(net.head, h, batch.levels, net.embeddings, mode, rng, &cache.head);
  cache.probabilities = nn::softmax_columns(logits);
  return cache;
}

Gradients backward(const Network& net, const ForwardCache& cache, std::span<const int> labels) {
  if (cache.network != &net || cache.generation != net.generation) {
    throw DataError("stale forward cache: network changed since the forward pass");
  }
  const auto B = cache.probabilities.cols();
  if (static_cast<Eigen::Index>(labels.size()) != B) throw DataError("label count does not match batch");

  Gradients out{net.zeros_like(), nn::cross_entropy(cache.probabilities, labels)};
  Matrix grad_logits = cache.probabilities;
  for (Eigen::Index j = 0; j < B; ++j) {
    const int y = labels[static_cast<std::size_t>(j)];
    if (y < 0 || y >= kClasses) throw DataError("label out of range");
    grad_logits(y, j) -= 1.0;
  }
  grad_logits /= static_cast<double>(B);

  const Matrix grad_h = stack_backward(net.head, cache.head, grad_logits, cache.levels, net.embeddings, out.grads.head);
  Eigen::Index offset = 0;
  if (net.gamepad) {
    const auto w = net.gamepad->output_width();
    stack_backward(*net.gamepad, *cache.gamepad, grad_h.middleRows(offset, w), cache.levels, net.embeddings,
                   *out.grads.gamepad, false);
    offset += w;
  }
  if (net.frames) {
    const auto w = net.frames->output_width();
    stack_backward(*net.frames, *cache.frames, grad_h.middleRows(offset, w), cache.levels, net.embeddings,
                   *out.grads.frames, false);
  }
  return out;
}

Matrix predict(const Network& net, const Batch& batch) { return forward(net, batch, Mode::kEval).probabilities; }

Matrix branch_latent(const Network& net, const Batch& batch, Modality branch) {
  const auto B = static_cast<Eigen::Index>(batch.size());
  if (branch == Modality::kGamepad && net.gamepad) {
    check_levels(batch, batch.gamepad.cols());
    return stack_forward(*net.gamepad, batch.gamepad, batch.levels, net.embeddings, Mode::kEval, nullptr, nullptr);
  }
  if (branch == Modality::kFrames && net.frames) {
    check_levels(batch, batch.frames.cols());
    return stack_forward(*net.frames, batch.frames, batch.levels, net.embeddings, Mode::kEval, nullptr, nullptr);
  }
  (void)B;
  throw DataError("network has no " + std::string(to_string(branch)) + " branch");
}

Matrix predict_from_latents(const Network& net, const Matrix& gamepad_latent, const Matrix& frames_latent,
                            std::span<const int> levels) {
  if (net.gamepad && gamepad_latent.size() == 0) throw DataError("missing gamepad latent");
  if (net.frames && frames_latent.size() == 0) throw DataError("missing frames latent");
  const Matrix h = head_input(net, net.gamepad ? &gamepad_latent : nullptr, net.frames ? &frames_latent : nullptr);
  if (static_cast<std::size_t>(h.cols()) != levels.size()) throw DataError("level count mismatch");
  return nn::softmax_columns(stack_forward(net.head, h, levels, net.embeddings, Mode::kEval, nullptr, nullptr));
}

}  // namespace engage::models
