#include "vfl/soul.hpp"

#include <chrono>
#include <cmath>

namespace vfl {

Vec ula_step(const Vec& theta, const Vec& grad, double h, const Vec& noise) {
  if (h < 0.0) throw DomainError("ula_step: step size must be >= 0");
  check_same_dim(theta, grad, "ula_step grad");
  check_same_dim(theta, noise, "ula_step noise");
  Vec out(theta.size());
  const double diffusion = std::sqrt(2.0 * h);
  for (std::size_t i = 0; i < theta.size(); ++i)
    out[i] = theta[i] + h * grad[i] + diffusion * noise[i];
  return out;
}

Vec soul_theta_grad_augmented(const ClientModel& model, const Vec& theta, const Vec& z_j,
                              double rho) {
  const ClientModel::PredictorEval eval = model.predictor(theta);
  const AuxConditional cond = log_aux_conditional(z_j, eval.pred, rho);
  Vec dtheta = model.log_prior(theta).dtheta;
  model.predictor_pullback(eval, cond.dpred, theta, dtheta, nullptr);
  return dtheta;
}

Vec soul_theta_grad_power(const ClientModel& model, Family family, const Vec& theta, const Vec& y,
                          const Vec& offset, const Vec& z_j, const Vec& z_others,
                          const GammaValue& gamma, int num_clients, double rho) {
  const ClientModel::PredictorEval eval = model.predictor(theta);
  const LoglikPower lik = loglik_power_j(family, y, offset, eval.pred, z_others, gamma,
                                         num_clients);
  const AuxConditional cond = log_aux_conditional(z_j, eval.pred, rho);
  Vec dtheta = model.log_prior(theta).dtheta;
  Vec dpred = add(lik.deta, cond.dpred);
  model.predictor_pullback(eval, dpred, theta, dtheta, nullptr);
  return dtheta;
}

Vec soul_z_prior_grad(const ClientModel& model, const std::vector<Vec>& theta_samples,
                      const Vec& z_j, double rho) {
  if (theta_samples.empty()) throw DomainError("soul_z_prior_grad: need at least one sample");
  Vec acc(z_j.size(), 0.0);
  for (const Vec& theta : theta_samples) {
    const Vec pred = model.predictor(theta).pred;
    const AuxConditional cond = log_aux_conditional(z_j, pred, rho);
    add_in_place(acc, cond.dz);
  }
  return scale(acc, 1.0 / static_cast<double>(theta_samples.size()));
}

Vec soul_z_cross_grad_power(const ClientModel& model, Family family,
                            const std::vector<Vec>& theta_samples, const Vec& y,
                            const Vec& offset, const Vec& z_others, const GammaValue& gamma,
                            int num_clients) {
  if (theta_samples.empty()) throw DomainError("soul_z_cross_grad_power: need samples");
  Vec acc(y.size(), 0.0);
  for (const Vec& theta : theta_samples) {
    const Vec pred = model.predictor(theta).pred;
    add_in_place(acc,
                 loglik_power_j(family, y, offset, pred, z_others, gamma, num_clients).deta);
  }
  return scale(acc, 1.0 / static_cast<double>(theta_samples.size()));
}

double soul_sigma_grad_power(const ClientModel& model, const std::vector<Vec>& theta_samples,
                             const Vec& y, const Vec& offset, const Vec& z_others,
                             const GammaValue& gamma, int num_clients) {
  if (theta_samples.empty()) throw DomainError("soul_sigma_grad_power: need samples");
  double acc = 0.0;
  for (const Vec& theta : theta_samples) {
    const Vec pred = model.predictor(theta).pred;
    acc += loglik_power_j(Family::LinearGaussian, y, offset, pred, z_others, gamma, num_clients)
               .dsigma;
  }
  return acc / static_cast<double>(theta_samples.size());
}

namespace {

double rm_delta(const SoulConfig& cfg, std::uint64_t t) {
  const double past_hold =
      std::max(0.0, static_cast<double>(t) - static_cast<double>(cfg.rm_hold));
  return cfg.rm_delta0 / (1.0 + past_hold / cfg.rm_tau);
}

struct SoulClientRt {
  int id = 0;
  ClientModel model;
  Vec theta;
  Vec theta_mean_acc;
  std::uint64_t theta_mean_count = 0;
  Vec z;
  Vec z_avg_acc;
  std::uint64_t z_avg_count = 0;

  explicit SoulClientRt(ClientModel m) : model(std::move(m)) {}
};

Message make_msg(MsgTag tag, const SoulConfig& cfg, std::uint64_t t, int from, int to,
                 int subject) {
  Message m;
  m.tag = tag;
  m.run_id = cfg.run_id;
  m.iteration = t;
  m.from = from;
  m.to = to;
  m.subject = subject;
  return m;
}

}  // namespace

SoulResult run_soul(const ModelSpec& spec, const Dataset& data, const SoulConfig& cfg,
                    TransportNetwork* net) {
  spec.validate(data);
  if (spec.formulation == Formulation::True)
    throw ConfigError("soul fits the augmented or power formulation");
  const bool power = spec.formulation == Formulation::Power;
  const int num_clients = data.num_clients();
  const std::size_t n = data.n();

  std::unique_ptr<TransportNetwork> owned;
  if (net == nullptr) {
    owned = std::make_unique<InProcessNetwork>(num_clients + 1);
    net = owned.get();
  }

  std::vector<ClientModel> models = make_client_models(spec, data, cfg.seed);
  std::vector<SoulClientRt> clients;
  for (int j = 0; j < num_clients; ++j) {
    SoulClientRt rt(std::move(models[static_cast<std::size_t>(j)]));
    rt.id = j;
    rt.theta = rt.model.theta_init();
    // Warm start: z at the predictor of the initial theta.
    rt.z = rt.model.predictor(rt.theta).pred;
    rt.theta_mean_acc.assign(rt.theta.size(), 0.0);
    rt.z_avg_acc.assign(n, 0.0);
    clients.push_back(std::move(rt));
  }

  GammaValue gamma;
  gamma.b = cfg.fixed_b;
  gamma.sigma = cfg.learn_sigma ? cfg.sigma_init : spec.sigma.value;
  double log_sigma = std::log(gamma.sigma);
  AdamConfig sigma_adam_cfg;
  sigma_adam_cfg.lr = cfg.sigma_lr;
  AdamState sigma_adam(1, sigma_adam_cfg);

  SoulResult res;
  std::vector<Vec> server_z(static_cast<std::size_t>(num_clients));
  for (int j = 0; j < num_clients; ++j) server_z[static_cast<std::size_t>(j)] = clients[j].z;

  const double avg_start =
      cfg.average_start_frac * static_cast<double>(std::max(1, cfg.outer_iterations));

  try {
    for (std::uint64_t t = 1; t <= static_cast<std::uint64_t>(cfg.outer_iterations); ++t) {
      // Server round: share the current z picture (sum is enough for the
      // augmented model, full blocks for power) plus the shared parameters.
      for (int j = 0; j < num_clients; ++j) {
        Message m = make_msg(MsgTag::AuxBroadcast, cfg, t, 0, j + 1, j);
        if (power) {
          for (int k = 0; k < num_clients; ++k)
            m.sections[k] = server_z[static_cast<std::size_t>(k)];
        } else {
          Vec zsum(n, 0.0);
          for (const Vec& zk : server_z) add_in_place(zsum, zk);
          m.payload = std::move(zsum);
        }
        m.shared = {gamma.b, gamma.sigma};
        net->endpoint(0).send(std::move(m));
      }

      const double delta = rm_delta(cfg, t);
      double grad_norm = 0.0;
      std::vector<Vec> prior_pieces(static_cast<std::size_t>(num_clients));
      std::vector<Vec> cross_pieces(static_cast<std::size_t>(num_clients));
      std::vector<double> sigma_pieces(static_cast<std::size_t>(num_clients), 0.0);

      for (SoulClientRt& c : clients) {
        const Message bc = net->endpoint(c.id + 1).receive(c.id + 1, MsgTag::AuxBroadcast, 0, t);
        GammaValue gv;
        gv.b = bc.shared.at(0);
        gv.sigma = bc.shared.at(1);

        Vec z_others;
        Vec zsum;
        if (power) {
          z_others.assign(n, 0.0);
          for (const auto& [k, v] : bc.sections)
            if (k != c.id) add_in_place(z_others, v);
        } else {
          zsum = bc.payload;
        }

        // Inner Langevin chain, conditionally independent across clients.
        RngStream rng(cfg.seed, actor_stream(static_cast<std::uint64_t>(c.id) + 1, t));
        std::vector<Vec> draws;
        draws.reserve(static_cast<std::size_t>(cfg.inner_samples));
        for (int m = 0; m < cfg.inner_samples; ++m) {
          const Vec grad =
              power ? soul_theta_grad_power(c.model, spec.family, c.theta, data.y, data.offset,
                                            c.z, z_others, gv, num_clients, spec.rho)
                    : soul_theta_grad_augmented(c.model, c.theta, c.z, spec.rho);
          const Vec noise = rng.standard_normal_vec(c.theta.size());
          c.theta = ula_step(c.theta, grad, cfg.ula_step, noise);
          check_finite(c.theta, "soul theta chain");
          draws.push_back(c.theta);
          add_in_place(c.theta_mean_acc, c.theta);
          ++c.theta_mean_count;
        }

        prior_pieces[static_cast<std::size_t>(c.id)] =
            soul_z_prior_grad(c.model, draws, c.z, spec.rho);

        if (power) {
          cross_pieces[static_cast<std::size_t>(c.id)] = soul_z_cross_grad_power(
              c.model, spec.family, draws, data.y, data.offset, z_others, gv, num_clients);
          Message cg = make_msg(MsgTag::CrossGrad, cfg, t, c.id + 1, 0, c.id);
          for (int k = 0; k < num_clients; ++k)
            if (k != c.id) cg.sections[k] = cross_pieces[static_cast<std::size_t>(c.id)];
          cg.payload = prior_pieces[static_cast<std::size_t>(c.id)];
          net->endpoint(c.id + 1).send(std::move(cg));
          if (cfg.learn_sigma) {
            Message sg = make_msg(MsgTag::SigmaGrad, cfg, t, c.id + 1, 0, c.id);
            sigma_pieces[static_cast<std::size_t>(c.id)] = soul_sigma_grad_power(
                c.model, draws, data.y, data.offset, z_others, gv, num_clients);
            sg.payload = {sigma_pieces[static_cast<std::size_t>(c.id)]};
            net->endpoint(c.id + 1).send(std::move(sg));
          }
        } else {
          // Shared-y scenario: the client assembles its own z update from the
          // broadcast sum and sends the new value.
          Vec eta(n, gv.b);
          if (!data.offset.empty())
            for (std::size_t i = 0; i < n; ++i) eta[i] += data.offset[i];
          add_in_place(eta, zsum);
          const Vec deta = dlog_lik_deta(spec.family, data.y, eta, gv.sigma);
          Vec g = add(deta, prior_pieces[static_cast<std::size_t>(c.id)]);
          grad_norm = std::max(grad_norm, norm_inf(g));
          axpy(delta, g, c.z);
          check_finite(c.z, "soul z");
          if (norm_inf(c.z) > cfg.z_norm_bound)
            throw NumericError("soul: z update diverged past the norm bound");
          Message up = make_msg(MsgTag::AuxUpdate, cfg, t, c.id + 1, 0, c.id);
          up.payload = c.z;
          net->endpoint(c.id + 1).send(std::move(up));
        }
      }

      if (power) {
        // Server aggregates the appendix's per-client pieces and owns the z update.
        std::vector<Message> cross_msgs;
        for (int j = 0; j < num_clients; ++j)
          cross_msgs.push_back(net->endpoint(0).receive(0, MsgTag::CrossGrad, j + 1, t));
        for (int j = 0; j < num_clients; ++j) {
          Vec g = cross_msgs[static_cast<std::size_t>(j)].payload;  // own prior piece
          for (int k = 0; k < num_clients; ++k) {
            if (k == j) continue;
            const auto& sections = cross_msgs[static_cast<std::size_t>(k)].sections;
            add_in_place(g, sections.at(j));
          }
          grad_norm = std::max(grad_norm, norm_inf(g));
          axpy(delta, g, server_z[static_cast<std::size_t>(j)]);
          check_finite(server_z[static_cast<std::size_t>(j)], "soul z");
          if (norm_inf(server_z[static_cast<std::size_t>(j)]) > cfg.z_norm_bound)
            throw NumericError("soul: z update diverged past the norm bound");
          clients[static_cast<std::size_t>(j)].z = server_z[static_cast<std::size_t>(j)];
        }
        if (cfg.learn_sigma) {
          double dsig = -gamma.sigma;  // half-normal HN(1) prior
          for (int j = 0; j < num_clients; ++j) {
            const Message sg = net->endpoint(0).receive(0, MsgTag::SigmaGrad, j + 1, t);
            dsig += sg.payload.at(0);
          }
          log_sigma += sigma_adam.step({dsig * gamma.sigma})[0];
          gamma.sigma = std::exp(log_sigma);
        }
      } else {
        for (int j = 0; j < num_clients; ++j) {
          const Message up = net->endpoint(0).receive(0, MsgTag::AuxUpdate, j + 1, t);
          server_z[static_cast<std::size_t>(up.subject)] = up.payload;
        }
        if (cfg.learn_sigma) {
          Vec eta(n, gamma.b);
          if (!data.offset.empty())
            for (std::size_t i = 0; i < n; ++i) eta[i] += data.offset[i];
          for (const Vec& zk : server_z) add_in_place(eta, zk);
          const double dsig = dlog_lik_dsigma(data.y, eta, gamma.sigma) - gamma.sigma;
          log_sigma += sigma_adam.step({dsig * gamma.sigma})[0];
          gamma.sigma = std::exp(log_sigma);
        }
      }

      res.grad_norm_trace.push_back(grad_norm);
      if (cfg.learn_sigma) res.sigma_trace.push_back(gamma.sigma);
      if (static_cast<double>(t) >= avg_start) {
        for (SoulClientRt& c : clients) {
          add_in_place(c.z_avg_acc, c.z);
          ++c.z_avg_count;
        }
      }
    }
  } catch (const std::exception& e) {
    res.aborted = true;
    res.abort_reason = e.what();
    res.abort_iteration = res.grad_norm_trace.size() + 1;
  }

  // Final chain summaries, labeled conditional on z_hat.
  for (SoulClientRt& c : clients) {
    Message ts = make_msg(MsgTag::ThetaSummary, cfg,
                          static_cast<std::uint64_t>(cfg.outer_iterations), c.id + 1, 0, c.id);
    Vec mean = c.theta_mean_acc;
    if (c.theta_mean_count > 0)
      for (double& v : mean) v /= static_cast<double>(c.theta_mean_count);
    ts.payload = mean;
    net->endpoint(c.id + 1).send(std::move(ts));
    res.theta_cond_mean.push_back(std::move(mean));
    res.theta_chain.push_back(c.theta);
    res.z_final.push_back(c.z);
    Vec zavg = c.z_avg_acc;
    if (c.z_avg_count > 0)
      for (double& v : zavg) v /= static_cast<double>(c.z_avg_count);
    else
      zavg = c.z;
    res.z_hat.push_back(std::move(zavg));
  }
  for (int j = 0; j < num_clients; ++j)
    net->endpoint(0).receive(0, MsgTag::ThetaSummary, j + 1,
                             static_cast<std::uint64_t>(cfg.outer_iterations));
  res.sigma_final = gamma.sigma;
  res.messages = net->total_messages();
  res.bytes = net->total_bytes();
  return res;
}

}  // namespace vfl
