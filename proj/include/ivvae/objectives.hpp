#pragma once

// Semi-supervised objective: labeled reconstruction with the true one-hot
// class, unlabeled reconstruction with a relaxed class sample, a weighted
// classification log-likelihood, and a variant-specific regularizer J^Both
// computed once on the pooled labeled + unlabeled minibatch.
//
//   total = recon_L + cls - J^Both(L u U) + recon_U          (maximized)

#include <torch/torch.h>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ivvae/aggregate.hpp"
#include "ivvae/distributions.hpp"
#include "ivvae/error.hpp"
#include "ivvae/model.hpp"

namespace ivvae {

enum class ModelVariant { vae, beta_vae, beta_tcvae_1, beta_tcvae_2, joint_vae, iv_vae_1, iv_vae_2 };

inline const std::vector<ModelVariant>& all_variants() {
  static const std::vector<ModelVariant> v{ModelVariant::vae,          ModelVariant::beta_vae,
                                           ModelVariant::beta_tcvae_1, ModelVariant::beta_tcvae_2,
                                           ModelVariant::joint_vae,    ModelVariant::iv_vae_1,
                                           ModelVariant::iv_vae_2};
  return v;
}

inline std::string to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::vae: return "vae";
    case ModelVariant::beta_vae: return "beta_vae";
    case ModelVariant::beta_tcvae_1: return "beta_tcvae_1";
    case ModelVariant::beta_tcvae_2: return "beta_tcvae_2";
    case ModelVariant::joint_vae: return "joint_vae";
    case ModelVariant::iv_vae_1: return "iv_vae_1";
    case ModelVariant::iv_vae_2: return "iv_vae_2";
  }
  return "?";
}

/// Accepts the canonical names with '_' or '-' separators ("iv-vae-1", "beta_tcvae_2", "jointvae").
/// Accepts "iv_vae_1", "ivvae1", "beta-tcvae1", ...: case and separators are ignored.
inline ModelVariant parse_variant(const std::string& s) {
  auto squash = [](const std::string& in) {
    std::string out;
    for (char c : in)
      if (c != '-' && c != '_') out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
  };
  for (auto v : all_variants()) {
    if (squash(to_string(v)) == squash(s)) return v;
  }
  throw ConfigError("unknown model variant '" + s + "'");
}

/// Linear ramp from `start` to `end` over `ramp_steps` optimizer steps, then flat.
struct CapacityRamp {
  double start = 0.0;
  double end = 0.0;
  int64_t ramp_steps = 0;

  double at(int64_t step) const {
    if (ramp_steps <= 0 || step >= ramp_steps) return end;
    if (step <= 0) return start;
    return start + (end - start) * static_cast<double>(step) / static_cast<double>(ramp_steps);
  }

  void validate(const char* what) const {
    if (!(start >= 0.0) || !(end >= start) || !std::isfinite(end) || ramp_steps < 0) {
      throw ConfigError(std::string("CapacitySchedule: ") + what + " must be a nonnegative nondecreasing ramp");
    }
  }
};

struct CapacitySchedule {
  CapacityRamp c_y;
  CapacityRamp c_z;

  /// 0 -> (log C, 25 nats) over the first half of training.
  static CapacitySchedule default_for(int classes, int64_t total_steps) {
    const int64_t half = total_steps / 2;
    return {{0.0, std::log(static_cast<double>(classes)), half}, {0.0, 25.0, half}};
  }

  void validate() const {
    c_y.validate("c_y");
    c_z.validate("c_z");
  }
};

/// Objective coefficients. Optional fields are "absent"; a field that does not
/// belong to the chosen variant must be absent or zero.
struct LossWeights {
  double rho = 0.0;
  std::optional<double> alpha;  // overrides rho (N_L + N_U) / N_L
  std::optional<double> lambda;
  std::optional<double> beta;
  std::optional<double> beta_z;
  std::optional<double> gamma_y;
  std::optional<double> gamma_z;
  double delta = 0.0;
  std::optional<CapacitySchedule> capacity;

  nlohmann::json to_json() const {
    nlohmann::json j{{"rho", rho}, {"delta", delta}};
    auto put = [&](const char* k, const std::optional<double>& v) { j[k] = v ? nlohmann::json(*v) : nlohmann::json(); };
    put("alpha", alpha);
    put("lambda", lambda);
    put("beta", beta);
    put("beta_z", beta_z);
    put("gamma_y", gamma_y);
    put("gamma_z", gamma_z);
    if (capacity) {
      auto ramp = [](const CapacityRamp& r) {
        return nlohmann::json{{"start", r.start}, {"end", r.end}, {"ramp_steps", r.ramp_steps}};
      };
      j["capacity"] = {{"c_y", ramp(capacity->c_y)}, {"c_z", ramp(capacity->c_z)}};
    }
    return j;
  }

  static LossWeights from_json(const nlohmann::json& j) {
    LossWeights w;
    w.rho = j.value("rho", 0.0);
    w.delta = j.value("delta", 0.0);
    auto get = [&](const char* k) -> std::optional<double> {
      if (!j.contains(k) || j.at(k).is_null()) return std::nullopt;
      return j.at(k).get<double>();
    };
    w.alpha = get("alpha");
    w.lambda = get("lambda");
    w.beta = get("beta");
    w.beta_z = get("beta_z");
    w.gamma_y = get("gamma_y");
    w.gamma_z = get("gamma_z");
    if (j.contains("capacity") && !j.at("capacity").is_null()) {
      auto ramp = [](const nlohmann::json& r) {
        return CapacityRamp{r.at("start").get<double>(), r.at("end").get<double>(), r.at("ramp_steps").get<int64_t>()};
      };
      w.capacity = CapacitySchedule{ramp(j.at("capacity").at("c_y")), ramp(j.at("capacity").at("c_z"))};
    }
    return w;
  }
};

/// alpha = rho (N_L + N_U) / N_L, with U the whole training set.
inline double derive_alpha(double rho, int64_t n_labeled, int64_t n_unlabeled) {
  if (n_labeled <= 0) throw ConfigError("derive_alpha: no labeled samples");
  if (rho < 0.0) throw ConfigError("derive_alpha: rho must be nonnegative");
  return rho * static_cast<double>(n_labeled + n_unlabeled) / static_cast<double>(n_labeled);
}

/// Weights with every field the variant needs filled in.
struct ResolvedWeights {
  ModelVariant variant = ModelVariant::iv_vae_1;
  double alpha = 0.0;
  double lambda = 0.0;
  double beta = 1.0;
  double beta_z = 1.0;
  double gamma_y = 1.0;
  double gamma_z = 1.0;
  double delta = 0.0;
  std::optional<CapacitySchedule> capacity;

  nlohmann::json to_json() const {
    LossWeights w;
    w.alpha = alpha;
    w.lambda = lambda;
    w.beta = beta;
    w.beta_z = beta_z;
    w.gamma_y = gamma_y;
    w.gamma_z = gamma_z;
    w.delta = delta;
    w.capacity = capacity;
    auto j = w.to_json();
    j.erase("rho");
    j["variant"] = to_string(variant);
    return j;
  }
};

namespace detail {

struct FieldUse {
  bool lambda = false, beta = false, beta_z = false, gamma_y = false, gamma_z = false, capacity = false, delta = false;
};

inline FieldUse fields_of(ModelVariant v) {
  switch (v) {
    case ModelVariant::vae: return {};
    case ModelVariant::beta_vae: return {.beta = true};
    case ModelVariant::beta_tcvae_1: return {.beta_z = true, .gamma_y = true, .gamma_z = true, .delta = true};
    case ModelVariant::beta_tcvae_2: return {.beta = true, .gamma_y = true, .gamma_z = true, .delta = true};
    case ModelVariant::joint_vae: return {.beta = true, .capacity = true};
    case ModelVariant::iv_vae_1:
      return {.lambda = true, .beta_z = true, .gamma_y = true, .gamma_z = true, .delta = true};
    case ModelVariant::iv_vae_2:
      return {.lambda = true, .beta = true, .gamma_y = true, .gamma_z = true, .delta = true};
  }
  return {};
}

inline double take(const std::optional<double>& v, bool used, double fallback, const char* name, ModelVariant variant) {
  if (v && (!(*v >= 0.0) || !std::isfinite(*v))) throw ConfigError(std::string("LossWeights: ") + name + " must be a nonnegative number");
  if (!used) {
    if (v && *v != 0.0) {
      throw ConfigError(std::string("LossWeights: ") + name + " does not apply to variant " + to_string(variant));
    }
    return 0.0;
  }
  return v.value_or(fallback);
}

}  // namespace detail

/// Checks the weights against the variant and fills defaults (1 for beta,
/// beta_z and gammas, 0 for lambda). alpha comes from the override or from
/// rho and the split sizes.
inline ResolvedWeights resolve_weights(const LossWeights& w, ModelVariant variant, int64_t n_labeled,
                                       int64_t n_unlabeled) {
  const auto use = detail::fields_of(variant);
  ResolvedWeights r;
  r.variant = variant;
  r.lambda = detail::take(w.lambda, use.lambda, 0.0, "lambda", variant);
  r.beta = detail::take(w.beta, use.beta, 1.0, "beta", variant);
  r.beta_z = detail::take(w.beta_z, use.beta_z, 1.0, "beta_z", variant);
  r.gamma_y = detail::take(w.gamma_y, use.gamma_y, 1.0, "gamma_y", variant);
  r.gamma_z = detail::take(w.gamma_z, use.gamma_z, 1.0, "gamma_z", variant);
  if (variant == ModelVariant::vae) r.beta = 1.0;
  if (!(w.delta >= 0.0)) throw ConfigError("LossWeights: delta must be nonnegative");
  if (w.delta != 0.0 && !use.delta) {
    throw ConfigError("LossWeights: delta does not apply to variant " + to_string(variant));
  }
  r.delta = w.delta;
  if (w.capacity) {
    if (!use.capacity) throw ConfigError("LossWeights: capacity schedule applies only to joint_vae");
    w.capacity->validate();
  } else if (use.capacity) {
    throw ConfigError("LossWeights: joint_vae needs a capacity schedule");
  }
  r.capacity = w.capacity;
  if (w.alpha) {
    if (!(*w.alpha >= 0.0) || !std::isfinite(*w.alpha)) throw ConfigError("LossWeights: alpha must be nonnegative");
    r.alpha = *w.alpha;
  } else {
    r.alpha = w.rho == 0.0 ? 0.0 : derive_alpha(w.rho, n_labeled, n_unlabeled);
  }
  return r;
}

/// alpha * mean_l log psi_l(t_l). Labels are 0-based class ids; negative ids
/// mark missing labels and are rejected.
inline torch::Tensor classification_term(const CategoricalPosterior& psi, const torch::Tensor& labels, double alpha) {
  psi.validate();
  if (labels.dim() != 1 || labels.size(0) != psi.probs.size(0)) {
    throw DimensionError("classification_term: one label per labeled sample");
  }
  if (labels.numel() == 0) throw ValidationError("classification_term: empty labeled batch");
  if ((labels < 0).any().item<bool>()) throw ValidationError("classification_term: missing label in labeled batch");
  if ((labels >= psi.classes()).any().item<bool>()) throw ValidationError("classification_term: label out of range");
  const auto log_psi = torch::log(psi.probs.clamp_min(kLogProbFloor));
  return alpha * log_psi.gather(1, labels.to(torch::kInt64).unsqueeze(1)).mean();
}

/// Everything J^Both may need from one pooled batch.
struct JBothInputs {
  AggregateEstimates estimates;
  torch::Tensor kl_y;  // [B] KL(q(y|x) || p(y))
  torch::Tensor kl_z;  // [B] KL(q(z|x) || p(z))
  torch::Tensor mi_data_latent;  // I(y,z;x) estimate, only read when delta > 0
};

namespace detail {

inline torch::Tensor reg_and_tc_z(const JBothInputs& in, const ResolvedWeights& w) {
  const auto& e = in.estimates;
  return w.gamma_y * e.reg_y + w.beta_z * e.tc_z + w.gamma_z * e.reg_z;
}

inline torch::Tensor reg_and_tc_yz(const JBothInputs& in, const ResolvedWeights& w) {
  const auto& e = in.estimates;
  return w.beta * e.tc_yz + w.gamma_y * e.reg_y + w.gamma_z * e.reg_z;
}

}  // namespace detail

/// Variant dispatch. Terms with zero weight are left out entirely, so
/// iv_vae_k with lambda = 0 is the same computation as beta_tcvae_k.
inline torch::Tensor j_both(const JBothInputs& in, const ResolvedWeights& w, int64_t step = 0) {
  torch::Tensor out;
  switch (w.variant) {
    case ModelVariant::vae:
    case ModelVariant::beta_vae:
      out = (in.kl_y + in.kl_z).mean();
      if (w.beta != 1.0) out = w.beta * out;
      break;
    case ModelVariant::beta_tcvae_1:
    case ModelVariant::iv_vae_1:
      out = detail::reg_and_tc_z(in, w);
      break;
    case ModelVariant::beta_tcvae_2:
    case ModelVariant::iv_vae_2:
      out = detail::reg_and_tc_yz(in, w);
      break;
    case ModelVariant::joint_vae: {
      if (!w.capacity) throw ConfigError("j_both: joint_vae needs a capacity schedule");
      const double cy = w.capacity->c_y.at(step), cz = w.capacity->c_z.at(step);
      out = w.beta * (in.kl_y - cy).abs().mean() + w.beta * (in.kl_z - cz).abs().mean();
      break;
    }
  }
  if ((w.variant == ModelVariant::iv_vae_1 || w.variant == ModelVariant::iv_vae_2) && w.lambda != 0.0) {
    out = w.lambda * in.estimates.vec_idp + out;
  }
  if (w.delta != 0.0) out = out + w.delta * in.mi_data_latent;
  return out;
}

struct ObjectiveBreakdown {
  double recon_l = 0.0;
  double recon_u = 0.0;
  double cls = 0.0;
  double vec_idp = 0.0;
  double tc_z = 0.0;
  double tc_yz = 0.0;
  double reg_y = 0.0;
  double reg_z = 0.0;
  double kl_beta_vae = 0.0;  // E[KL_y + KL_z] on the pooled batch
  double kl_y_dev = 0.0;      // joint_vae: mean |KL_y - C_y|
  double kl_z_dev = 0.0;      // joint_vae: mean |KL_z - C_z|
  double mi_data_latent = 0.0;  // only when delta > 0
  double j_both = 0.0;
  double total = 0.0;
  double elbo_eval = std::nan("");

  /// recon_L + cls - J^Both + recon_U recomputed from the parts.
  double resummed() const { return recon_l + cls - j_both + recon_u; }

  nlohmann::json to_json() const {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); };
    return {{"recon_l", num(recon_l)}, {"recon_u", num(recon_u)}, {"cls", num(cls)},
            {"vec_idp", num(vec_idp)}, {"tc_z", num(tc_z)},       {"tc_yz", num(tc_yz)},
            {"reg_y", num(reg_y)},     {"reg_z", num(reg_z)},     {"kl_beta_vae", num(kl_beta_vae)},
            {"kl_y_dev", num(kl_y_dev)}, {"kl_z_dev", num(kl_z_dev)}, {"mi_data_latent", num(mi_data_latent)},
            {"j_both", num(j_both)},   {"total", num(total)},     {"elbo_eval", num(elbo_eval)}};
  }

  static ObjectiveBreakdown from_json(const nlohmann::json& j) {
    auto get = [&](const char* k) {
      return j.contains(k) && !j.at(k).is_null() ? j.at(k).get<double>() : std::nan("");
    };
    ObjectiveBreakdown b;
    b.recon_l = get("recon_l");
    b.recon_u = get("recon_u");
    b.cls = get("cls");
    b.vec_idp = get("vec_idp");
    b.tc_z = get("tc_z");
    b.tc_yz = get("tc_yz");
    b.reg_y = get("reg_y");
    b.reg_z = get("reg_z");
    b.kl_beta_vae = get("kl_beta_vae");
    b.kl_y_dev = get("kl_y_dev");
    b.kl_z_dev = get("kl_z_dev");
    b.mi_data_latent = get("mi_data_latent");
    b.j_both = get("j_both");
    b.total = get("total");
    b.elbo_eval = get("elbo_eval");
    return b;
  }

  /// Field-wise sum, for running averages.
  ObjectiveBreakdown& operator+=(const ObjectiveBreakdown& o) {
    recon_l += o.recon_l, recon_u += o.recon_u, cls += o.cls, vec_idp += o.vec_idp, tc_z += o.tc_z;
    tc_yz += o.tc_yz, reg_y += o.reg_y, reg_z += o.reg_z, kl_beta_vae += o.kl_beta_vae;
    kl_y_dev += o.kl_y_dev, kl_z_dev += o.kl_z_dev, mi_data_latent += o.mi_data_latent;
    j_both += o.j_both, total += o.total;
    return *this;
  }

  ObjectiveBreakdown scaled(double s) const {
    ObjectiveBreakdown b = *this;
    for (double* f : {&b.recon_l, &b.recon_u, &b.cls, &b.vec_idp, &b.tc_z, &b.tc_yz, &b.reg_y, &b.reg_z,
                      &b.kl_beta_vae, &b.kl_y_dev, &b.kl_z_dev, &b.mi_data_latent, &b.j_both, &b.total}) {
      *f *= s;
    }
    return b;
  }
};

/// J^Both rebuilt from the logged components and the weights.
inline double recompute_j_both(const ObjectiveBreakdown& b, const ResolvedWeights& w) {
  double j = 0.0;
  switch (w.variant) {
    case ModelVariant::vae:
    case ModelVariant::beta_vae:
      j = w.beta * b.kl_beta_vae;
      break;
    case ModelVariant::beta_tcvae_1:
    case ModelVariant::iv_vae_1:
      j = w.gamma_y * b.reg_y + w.beta_z * b.tc_z + w.gamma_z * b.reg_z;
      break;
    case ModelVariant::beta_tcvae_2:
    case ModelVariant::iv_vae_2:
      j = w.beta * b.tc_yz + w.gamma_y * b.reg_y + w.gamma_z * b.reg_z;
      break;
    case ModelVariant::joint_vae:
      j = w.beta * (b.kl_y_dev + b.kl_z_dev);
      break;
  }
  if (w.variant == ModelVariant::iv_vae_1 || w.variant == ModelVariant::iv_vae_2) j += w.lambda * b.vec_idp;
  return j + w.delta * b.mi_data_latent;
}

struct LabeledBatch {
  torch::Tensor images;  // [B_L, 1, H, W] or [B_L, H, W]
  torch::Tensor labels;  // [B_L] int64
};

struct StepContext {
  int64_t dataset_size = 0;  // N for the aggregate estimators
  int64_t step = 0;
  SamplerConfig sampler{};
  torch::Generator* gen = nullptr;
};

struct ObjectiveOutput {
  torch::Tensor total;
  ObjectiveBreakdown breakdown;
};

namespace detail {

inline torch::Tensor as_nchw(const torch::Tensor& x) { return x.dim() == 3 ? x.unsqueeze(1) : x; }

}  // namespace detail

/// One objective evaluation. The pooled batch is encoded once; labeled rows
/// reconstruct from the true one-hot class, unlabeled rows from the relaxed
/// sample. Noise is drawn from ctx.gen in a fixed order (z noise, then
/// Gumbel noise) so that equal streams give equal losses.
inline ObjectiveOutput assemble_total(ModelState& state, const LabeledBatch& labeled,
                                      const torch::Tensor& unlabeled, const ResolvedWeights& w,
                                      const StepContext& ctx) {
  if (ctx.gen == nullptr) throw ConfigError("assemble_total: no random generator");
  const int64_t n_l = labeled.images.defined() ? labeled.images.size(0) : 0;
  const int64_t n_u = unlabeled.defined() ? unlabeled.size(0) : 0;
  if (n_l == 0 && w.alpha > 0.0) throw ValidationError("assemble_total: empty labeled sub-batch with alpha > 0");
  if (n_l + n_u == 0) throw DimensionError("assemble_total: empty batch");
  if (n_l > 0 && (!labeled.labels.defined() || labeled.labels.numel() != n_l)) {
    throw ValidationError("assemble_total: every labeled image needs a label");
  }

  std::vector<torch::Tensor> parts;
  if (n_l > 0) parts.push_back(detail::as_nchw(labeled.images));
  if (n_u > 0) parts.push_back(detail::as_nchw(unlabeled));
  const auto x = (parts.size() == 1 ? parts[0] : torch::cat(parts, 0)).to(state.dtype());
  const auto post = encode(state, x);
  const auto opts = post.gaussian.mean.options();

  const auto z_noise = torch::randn(post.gaussian.mean.sizes(), *ctx.gen, opts);
  const auto u = open_uniform(post.categorical.probs.sizes(), *ctx.gen, opts);
  const auto z = gaussian_rsample(post.gaussian, z_noise);
  const auto y = gumbel_softmax_sample(post.categorical, ctx.sampler, u);

  ObjectiveBreakdown bd;
  auto total = torch::zeros({}, opts);
  torch::Tensor recon_l, recon_u, cls;
  if (n_l > 0) {
    const auto labels = labeled.labels.to(torch::kInt64);
    if ((labels < 0).any().item<bool>() || (labels >= state.arch.classes).any().item<bool>()) {
      throw ValidationError("assemble_total: label missing or out of range");
    }
    const auto onehot = torch::one_hot(labels, state.arch.classes).to(opts.dtype());
    const auto xl = x.narrow(0, 0, n_l);
    recon_l = bernoulli_recon_loglik(decode(state, onehot, z.narrow(0, 0, n_l)), xl);
    bd.recon_l = recon_l.item<double>();
    if (w.alpha > 0.0) {
      cls = classification_term({post.categorical.probs.narrow(0, 0, n_l)}, labels, w.alpha);
      bd.cls = cls.item<double>();
    }
  }
  if (n_u > 0) {
    recon_u = bernoulli_recon_loglik(decode(state, y.narrow(0, n_l, n_u), z.narrow(0, n_l, n_u)),
                                     x.narrow(0, n_l, n_u));
    bd.recon_u = recon_u.item<double>();
  }

  const BatchPosteriors batch{post.gaussian, post.categorical, ctx.dataset_size};
  const auto d = mws_densities(EvalPoints::paired(z), batch);
  JBothInputs in;
  in.estimates.vec_idp = vec_idp_from(d);
  in.estimates.tc_z = tc_z_from(d);
  in.estimates.tc_yz = tc_yz_from(d);
  in.estimates.reg_z = reg_z_from(d, z);
  in.estimates.reg_y = reg_y_from(batch);
  in.estimates.log_qz = d.log_qz;
  in.estimates.log_qz_marginal_sum = d.log_qz_dims.sum(-1);
  in.kl_y = categorical_kl_uniform(post.categorical);
  in.kl_z = gaussian_kl_standard(post.gaussian);
  if (w.delta != 0.0) in.mi_data_latent = mi_data_latent_from(d);
  const auto jb = j_both(in, w, ctx.step);

  // recon_L + cls - J^Both + recon_U, in that order
  if (recon_l.defined()) total = recon_l;
  if (cls.defined()) total = total + cls;
  total = total - jb;
  if (recon_u.defined()) total = total + recon_u;

  bd.vec_idp = in.estimates.vec_idp.item<double>();
  bd.tc_z = in.estimates.tc_z.item<double>();
  bd.tc_yz = in.estimates.tc_yz.item<double>();
  bd.reg_y = in.estimates.reg_y.item<double>();
  bd.reg_z = in.estimates.reg_z.item<double>();
  bd.kl_beta_vae = (in.kl_y + in.kl_z).mean().item<double>();
  if (w.variant == ModelVariant::joint_vae) {
    bd.kl_y_dev = (in.kl_y - w.capacity->c_y.at(ctx.step)).abs().mean().item<double>();
    bd.kl_z_dev = (in.kl_z - w.capacity->c_z.at(ctx.step)).abs().mean().item<double>();
  }
  if (w.delta != 0.0) bd.mi_data_latent = in.mi_data_latent.item<double>();
  bd.j_both = jb.item<double>();
  bd.total = total.item<double>();
  return {total, bd};
}

/// Mean over the batch of recon - [KL_y + KL_z] for given posteriors and
/// decoder means.
inline torch::Tensor elbo_from(const PosteriorPair& post, const torch::Tensor& means, const torch::Tensor& targets) {
  const auto recon = bernoulli_recon_loglik_per_sample(means, targets);
  return (recon - categorical_kl_uniform(post.categorical) - gaussian_kl_standard(post.gaussian)).mean();
}

/// Evaluation ELBO with one soft (y, z) sample and no label substitution.
inline torch::Tensor elbo_eval(ModelState& state, const torch::Tensor& images, torch::Generator& gen,
                               const SamplerConfig& sampler = {}) {
  const auto x = detail::as_nchw(images).to(state.dtype());
  const auto post = encode(state, x);
  const auto opts = post.gaussian.mean.options();
  const auto z = gaussian_rsample(post.gaussian, torch::randn(post.gaussian.mean.sizes(), gen, opts));
  SamplerConfig soft = sampler;
  soft.hard_forward = false;
  const auto y = gumbel_softmax_sample(post.categorical, soft, open_uniform(post.categorical.probs.sizes(), gen, opts));
  return elbo_from(post, decode(state, y, z), x);
}

}  // namespace ivvae
