#include "vfl/datagen.hpp"

#include <cmath>

namespace vfl {

std::vector<int> GeneratorSpec::resolved_blocks() const {
  if (!block_sizes.empty()) {
    int total = 0;
    for (int s : block_sizes) total += s;
    if (total != p) throw ConfigError("generator: block sizes must sum to p");
    return block_sizes;
  }
  if (num_clients < 1 || num_clients > p)
    throw ConfigError("generator: need 1 <= clients <= p");
  std::vector<int> sizes(static_cast<std::size_t>(num_clients), p / num_clients);
  for (int r = 0; r < p % num_clients; ++r) sizes[static_cast<std::size_t>(r)] += 1;
  return sizes;
}

namespace {

std::string beta_key(int client, int k) {
  return "client" + std::to_string(client) + ".beta[" + std::to_string(k) + "]";
}

Mat gaussian_mat(std::size_t r, std::size_t c, RngStream& rng) {
  Mat m(r, c);
  for (double& v : m.data) v = rng.standard_normal();
  return m;
}

}  // namespace

std::uint64_t poisson_draw(RngStream& stream, double rate) {
  if (!(rate >= 0.0) || !std::isfinite(rate)) throw DomainError("poisson_draw: bad rate");
  if (rate < 10.0) {
    // Knuth inversion by uniform products.
    const double limit = std::exp(-rate);
    double prod = stream.uniform();
    std::uint64_t k = 0;
    while (prod > limit) {
      ++k;
      prod *= stream.uniform();
    }
    return k;
  }
  // Hormann's PTRS transformed rejection, valid for rate >= 10.
  const double b = 0.931 + 2.53 * std::sqrt(rate);
  const double a = -0.059 + 0.02483 * b;
  const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
  const double v_r = 0.9277 - 3.6224 / (b - 2.0);
  for (;;) {
    const double u = stream.uniform() - 0.5;
    const double v = stream.uniform();
    const double us = 0.5 - std::fabs(u);
    const double k = std::floor((2.0 * a / us + b) * u + rate + 0.43);
    if (us >= 0.07 && v <= v_r) return static_cast<std::uint64_t>(k);
    if (k < 0.0 || (us < 0.013 && v > us)) continue;
    const double log_rate = std::log(rate);
    if (std::log(v * inv_alpha / (a / (us * us) + b)) <=
        k * log_rate - rate - std::lgamma(k + 1.0)) {
      return static_cast<std::uint64_t>(k);
    }
  }
}

GeneratedData gen_logistic(const GeneratorSpec& spec) {
  RngStream rng(spec.seed, 9001);
  const std::vector<int> sizes = spec.resolved_blocks();
  GeneratedData out;
  Vec eta(spec.n, 0.0);
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    Mat x = gaussian_mat(spec.n, static_cast<std::size_t>(sizes[j]), rng);
    Vec beta(static_cast<std::size_t>(sizes[j]));
    for (std::size_t k = 0; k < beta.size(); ++k) {
      beta[k] = spec.beta_scale * rng.standard_normal();
      out.truth[beta_key(static_cast<int>(j), static_cast<int>(k))] = beta[k];
    }
    add_in_place(eta, matvec(x, beta));
    out.data.blocks.push_back(std::move(x));
  }
  out.truth["b"] = 0.0;
  out.data.y.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const double noisy = eta[i] + spec.noise_sd * rng.standard_normal();
    out.data.y[i] = rng.uniform() < sigmoid(noisy) ? 1.0 : 0.0;
  }
  return out;
}

GeneratedData gen_linear(const GeneratorSpec& spec) {
  RngStream rng(spec.seed, 9002);
  const std::vector<int> sizes = spec.resolved_blocks();
  GeneratedData out;
  Vec eta(spec.n, 0.0);
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    Mat x = gaussian_mat(spec.n, static_cast<std::size_t>(sizes[j]), rng);
    Vec beta(static_cast<std::size_t>(sizes[j]));
    for (std::size_t k = 0; k < beta.size(); ++k) {
      beta[k] = spec.beta_scale * rng.standard_normal();
      out.truth[beta_key(static_cast<int>(j), static_cast<int>(k))] = beta[k];
    }
    add_in_place(eta, matvec(x, beta));
    out.data.blocks.push_back(std::move(x));
  }
  out.truth["b"] = 0.0;
  out.truth["sigma"] = spec.noise_sd;
  out.data.y.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i)
    out.data.y[i] = eta[i] + spec.noise_sd * rng.standard_normal();
  return out;
}

GeneratedData gen_multilevel_poisson(const GeneratorSpec& spec) {
  RngStream rng(spec.seed, 9003);
  const std::vector<int> sizes = spec.resolved_blocks();
  if (spec.levels < 1) throw ConfigError("generator: levels must be >= 1");

  GeneratedData out;
  out.data.levels = spec.levels;
  out.data.offset.resize(spec.n);
  out.data.group.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const std::uint64_t pop = rng.uniform_int(static_cast<std::uint64_t>(spec.pop_min),
                                              static_cast<std::uint64_t>(spec.pop_max));
    out.data.offset[i] = std::log(static_cast<double>(pop));
    out.data.group[i] = static_cast<int>(rng.uniform_int(0, spec.levels - 1));
  }

  const double b = rng.standard_normal();
  out.truth["b"] = b;
  Vec eta(spec.n, b);
  for (std::size_t i = 0; i < spec.n; ++i) eta[i] += out.data.offset[i];

  for (std::size_t j = 0; j < sizes.size(); ++j) {
    const int p = sizes[j];
    Mat x = gaussian_mat(spec.n, static_cast<std::size_t>(p), rng);
    // mu ~ N(0,1), sigma ~ HN(1), beta^r ~ N(mu, sigma) per level and covariate.
    Mat beta(static_cast<std::size_t>(spec.levels), static_cast<std::size_t>(p));
    for (int r = 0; r < spec.levels; ++r) {
      for (int k = 0; k < p; ++k) {
        const double mu = rng.standard_normal();
        const double sg = std::fabs(rng.standard_normal());
        const double bt = mu + sg * rng.standard_normal();
        beta(r, k) = bt;
        const std::string base = "client" + std::to_string(j);
        out.truth[base + ".mu_r" + std::to_string(r + 1) + "[" + std::to_string(k) + "]"] = mu;
        out.truth[base + ".sigma_r" + std::to_string(r + 1) + "[" + std::to_string(k) + "]"] = sg;
        out.truth[base + ".beta_r" + std::to_string(r + 1) + "[" + std::to_string(k) + "]"] = bt;
      }
    }
    for (std::size_t i = 0; i < spec.n; ++i) {
      const int r = out.data.group[i];
      double s = 0.0;
      for (int k = 0; k < p; ++k) s += x(i, static_cast<std::size_t>(k)) * beta(r, k);
      eta[i] += s;
    }
    out.data.blocks.push_back(std::move(x));
  }

  out.data.y.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    double e = eta[i];
    if (std::fabs(e) > spec.eta_clip) {
      e = e > 0 ? spec.eta_clip : -spec.eta_clip;
      ++out.clipped_rows;
    }
    out.data.y[i] = static_cast<double>(poisson_draw(rng, std::exp(e)));
  }
  return out;
}

GeneratedData gen_splitnn_synthetic(const GeneratorSpec& spec) {
  RngStream rng(spec.seed, 9004);
  const std::vector<int> sizes = spec.resolved_blocks();
  GeneratedData out;
  Vec eta(spec.n, 0.0);
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    Mat x = gaussian_mat(spec.n, static_cast<std::size_t>(sizes[j]), rng);
    Vec beta(static_cast<std::size_t>(sizes[j]));
    for (std::size_t k = 0; k < beta.size(); ++k) {
      beta[k] = 3.0 * spec.margin * rng.standard_normal();
      out.truth[beta_key(static_cast<int>(j), static_cast<int>(k))] = beta[k];
    }
    add_in_place(eta, matvec(x, beta));
    out.data.blocks.push_back(std::move(x));
  }
  out.data.y.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    // Wide margins keep the task cleanly separable.
    out.data.y[i] = (eta[i] + 0.2 * rng.standard_normal()) > 0.0 ? 1.0 : 0.0;
  }
  return out;
}

GeneratedData generate(const GeneratorSpec& spec) {
  switch (spec.family) {
    case Family::Logistic:
      return gen_logistic(spec);
    case Family::LinearGaussian:
      return gen_linear(spec);
    case Family::PoissonMultilevel:
      return gen_multilevel_poisson(spec);
    case Family::SplitnnBernoulli:
      return gen_splitnn_synthetic(spec);
  }
  throw ConfigError("generator: unknown family");
}

}  // namespace vfl
