#include "vfl/protocol.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <thread>

namespace vfl {

double FitResult::tail_elbo(std::size_t tail_rows) const {
  if (trace.empty()) return 0.0;
  const std::size_t take = std::min(tail_rows, trace.size());
  double acc = 0.0;
  for (std::size_t i = trace.size() - take; i < trace.size(); ++i) acc += trace[i].total;
  return acc / static_cast<double>(take);
}

namespace {

double lr_at(const RunConfig& cfg, std::uint64_t t) {
  if (cfg.lr_decay_to <= 0.0 || cfg.lr_decay_to >= cfg.adam.lr) return cfg.adam.lr;
  const double frac =
      static_cast<double>(t) / static_cast<double>(std::max(1, cfg.iterations));
  return cfg.adam.lr * std::pow(cfg.lr_decay_to / cfg.adam.lr, frac);
}

struct ParamAverager {
  Vec sum;
  std::uint64_t count = 0;
  void add(const Vec& p) {
    if (sum.empty()) sum.assign(p.size(), 0.0);
    add_in_place(sum, p);
    ++count;
  }
  Vec mean_or(const Vec& fallback) const {
    if (count == 0) return fallback;
    Vec m = sum;
    for (double& v : m) v /= static_cast<double>(count);
    return m;
  }
};

struct ClientRt {
  int id = 0;  // 0-based client index
  ClientModel model;
  ClientFactors factors;
  AdamState adam_phi, adam_psi, adam_net;
  const Vec* y = nullptr;       // visible in the shared-y scenario
  const Vec* offset = nullptr;  // power-model clients evaluate the likelihood
  Vec z_current;
  std::vector<PowerRound1> round1;
  std::vector<double> trace_local;  // L_j or L_1j
  std::vector<double> trace_l0j;    // power only
  ParamAverager avg_phi, avg_psi, avg_net;
  bool record_samples = false;
  std::vector<Vec> theta_draws;

  explicit ClientRt(ClientModel m) : model(std::move(m)) {}
};

struct ServerRt {
  Vec y;
  Vec offset;
  Family family = Family::Logistic;
  int num_clients = 0;
  GammaFactor gamma;
  AdamState adam_gamma;
  std::vector<Vec> z;
  GammaFactor::Sample gamma_sample;
  std::vector<double> trace_l0;     // alg1: L0 + gamma terms
  std::vector<double> trace_gamma;  // alg2: gamma terms only
  ParamAverager avg_gamma;
};

// The aux family input for the augmented model never includes y; the power
// family conditions on it (clients know y in that scenario).
const Vec* aux_y(const ClientRt& c) {
  if (c.factors.amortized() && std::get<AmortizedAux>(c.factors.aux).takes_y()) return c.y;
  return nullptr;
}

// ---------------------------------------------------------------------------
// Iteration kernels. Federated loops and the monolithic reference call these
// with identical arguments, which is what makes them bit-equal.
// ---------------------------------------------------------------------------

Vec client_init_z(ClientRt& c, const RunConfig& cfg) {
  RngStream rng(cfg.seed, actor_stream(static_cast<std::uint64_t>(c.id) + 1, 0));
  const Vec eps = rng.standard_normal_vec(static_cast<std::size_t>(c.model.theta_dim()));
  const Vec tau = rng.standard_normal_vec(c.model.n());
  const Vec theta = c.factors.theta.sample(eps);
  if (c.record_samples) c.theta_draws.push_back(theta);
  c.z_current = regenerate_z(c.model, c.factors, theta, tau, aux_y(c));
  return c.z_current;
}

void maybe_average(ClientRt& c, const RunConfig& cfg, std::uint64_t t) {
  if (cfg.average_start_frac >= 1.0) return;
  if (static_cast<double>(t) <
      cfg.average_start_frac * static_cast<double>(std::max(1, cfg.iterations)))
    return;
  c.avg_phi.add(c.factors.theta.pack());
  c.avg_psi.add(aux_pack(c.factors.aux));
  if (c.model.has_rep_net()) c.avg_net.add(c.model.rep_net().flatten());
}

void maybe_average(ServerRt& s, const RunConfig& cfg, std::uint64_t t) {
  if (cfg.average_start_frac >= 1.0 || s.gamma.param_count() == 0) return;
  if (static_cast<double>(t) <
      cfg.average_start_frac * static_cast<double>(std::max(1, cfg.iterations)))
    return;
  s.avg_gamma.add(s.gamma.pack());
}

Vec server_iter_alg1(ServerRt& s, const RunConfig& cfg, std::uint64_t t) {
  RngStream rng(cfg.seed, actor_stream(0, t));
  const GammaFactor::Sample gs = s.gamma.sample(rng);
  const LoglikAux lik = loglik_aux(s.family, s.y, s.offset, s.z, gs.value);
  s.trace_l0.push_back(lik.value + s.gamma.elbo_terms(gs));
  if (s.gamma.param_count() > 0) {
    const Vec g = s.gamma.stl_grads(gs, lik.db, lik.dsigma);
    s.gamma.apply_update(s.adam_gamma.step(g, lr_at(cfg, t)));
  }
  maybe_average(s, cfg, t);
  return lik.deta;
}

void client_iter_alg1(ClientRt& c, const RunConfig& cfg, const Vec& server_dz, double rho,
                      std::uint64_t t) {
  RngStream rng(cfg.seed, actor_stream(static_cast<std::uint64_t>(c.id) + 1, t));
  Vec dphi, dpsi, dnet;
  double elbo = 0.0;
  Vec theta_last, tau_last;
  for (int s = 0; s < cfg.mc_samples; ++s) {
    const Vec eps = rng.standard_normal_vec(static_cast<std::size_t>(c.model.theta_dim()));
    const Vec tau = rng.standard_normal_vec(c.model.n());
    const ClientGrads g =
        client_step_augmented(c.model, c.factors, server_dz, rho, eps, tau, aux_y(c));
    if (dphi.empty()) {
      dphi = g.dphi;
      dpsi = g.dpsi;
      dnet = g.dnet;
    } else {
      add_in_place(dphi, g.dphi);
      add_in_place(dpsi, g.dpsi);
      if (!dnet.empty()) add_in_place(dnet, g.dnet);
    }
    elbo += g.local_elbo;
    if (c.record_samples) c.theta_draws.push_back(g.theta);
    theta_last = g.theta;
    tau_last = tau;
  }
  const double inv = 1.0 / cfg.mc_samples;
  for (double& v : dphi) v *= inv;
  for (double& v : dpsi) v *= inv;
  for (double& v : dnet) v *= inv;

  const double lr = lr_at(cfg, t);
  c.factors.theta.apply_update(c.adam_phi.step(dphi, lr));
  aux_apply_update(c.factors.aux, c.adam_psi.step(dpsi, lr));
  if (c.model.has_rep_net()) {
    Vec flat = c.model.rep_net().flatten();
    add_in_place(flat, c.adam_net.step(dnet, lr));
    c.model.rep_net().unflatten(flat);
  }
  c.z_current = regenerate_z(c.model, c.factors, theta_last, tau_last, aux_y(c));
  check_finite(c.z_current, "client z");
  c.trace_local.push_back(elbo * inv);
  maybe_average(c, cfg, t);
}

struct PhaseAOut {
  Vec cross;  // dL0j/dz_k, equal for every target k != j
  double db = 0.0;
  double dsigma = 0.0;
};

PhaseAOut client_alg2_phase_a(ClientRt& c, const RunConfig& cfg, const std::vector<Vec>& z_all,
                              const GammaValue& gv, int num_clients, std::uint64_t t) {
  RngStream rng(cfg.seed, actor_stream(static_cast<std::uint64_t>(c.id) + 1, t));
  Vec z_others(c.model.n(), 0.0);
  for (int k = 0; k < num_clients; ++k)
    if (k != c.id) add_in_place(z_others, z_all[static_cast<std::size_t>(k)]);

  c.round1.clear();
  PhaseAOut out;
  out.cross.assign(c.model.n(), 0.0);
  double l0j = 0.0;
  for (int s = 0; s < cfg.mc_samples; ++s) {
    const Vec eps = rng.standard_normal_vec(static_cast<std::size_t>(c.model.theta_dim()));
    const Vec tau = rng.standard_normal_vec(c.model.n());
    PowerRound1 r = power_client_round1(c.model, c.factors, c.model.family(), *c.y,
                                        c.offset ? *c.offset : Vec{}, z_others, gv, num_clients,
                                        eps, tau);
    add_in_place(out.cross, r.lik.deta);
    out.db += r.lik.db;
    out.dsigma += r.lik.dsigma;
    l0j += r.lik.value;
    if (c.record_samples) c.theta_draws.push_back(r.theta);
    c.round1.push_back(std::move(r));
  }
  const double inv = 1.0 / cfg.mc_samples;
  for (double& v : out.cross) v *= inv;
  out.db *= inv;
  out.dsigma *= inv;
  c.trace_l0j.push_back(l0j * inv);
  return out;
}

void client_alg2_phase_b(ClientRt& c, const RunConfig& cfg, const Vec& cross_sum, double rho,
                         std::uint64_t t) {
  Vec dphi, dpsi, dnet;
  double elbo = 0.0;
  for (const PowerRound1& r : c.round1) {
    const ClientGrads g = power_client_round2(c.model, c.factors, r, cross_sum, rho, *c.y);
    if (dphi.empty()) {
      dphi = g.dphi;
      dpsi = g.dpsi;
      dnet = g.dnet;
    } else {
      add_in_place(dphi, g.dphi);
      add_in_place(dpsi, g.dpsi);
      if (!dnet.empty()) add_in_place(dnet, g.dnet);
    }
    elbo += g.local_elbo;
  }
  const double inv = 1.0 / static_cast<double>(c.round1.size());
  for (double& v : dphi) v *= inv;
  for (double& v : dpsi) v *= inv;
  for (double& v : dnet) v *= inv;

  const double lr = lr_at(cfg, t);
  c.factors.theta.apply_update(c.adam_phi.step(dphi, lr));
  aux_apply_update(c.factors.aux, c.adam_psi.step(dpsi, lr));
  if (c.model.has_rep_net()) {
    Vec flat = c.model.rep_net().flatten();
    add_in_place(flat, c.adam_net.step(dnet, lr));
    c.model.rep_net().unflatten(flat);
  }
  const PowerRound1& last = c.round1.back();
  c.z_current = regenerate_z(c.model, c.factors, last.theta, last.tau, aux_y(c));
  check_finite(c.z_current, "client z");
  c.trace_local.push_back(elbo * inv);
  maybe_average(c, cfg, t);
}

void server_alg2_phase_a(ServerRt& s, const RunConfig& cfg, std::uint64_t t) {
  RngStream rng(cfg.seed, actor_stream(0, t));
  s.gamma_sample = s.gamma.sample(rng);
  s.trace_gamma.push_back(s.gamma.elbo_terms(s.gamma_sample));
}

std::vector<Vec> server_alg2_phase_b(ServerRt& s, const RunConfig& cfg,
                                     const std::vector<PhaseAOut>& cross, std::uint64_t t) {
  const int num_clients = s.num_clients;
  std::vector<Vec> sums(static_cast<std::size_t>(num_clients), Vec(s.y.size(), 0.0));
  double db = 0.0, dsigma = 0.0;
  for (int k = 0; k < num_clients; ++k) {
    db += cross[static_cast<std::size_t>(k)].db;
    dsigma += cross[static_cast<std::size_t>(k)].dsigma;
    for (int j = 0; j < num_clients; ++j) {
      if (j == k) continue;
      add_in_place(sums[static_cast<std::size_t>(j)], cross[static_cast<std::size_t>(k)].cross);
    }
  }
  if (s.gamma.param_count() > 0) {
    const Vec g = s.gamma.stl_grads(s.gamma_sample, db, dsigma);
    s.gamma.apply_update(s.adam_gamma.step(g, lr_at(cfg, t)));
  }
  maybe_average(s, cfg, t);
  return sums;
}

// ---------------------------------------------------------------------------
// Runtime construction and result assembly
// ---------------------------------------------------------------------------

MlpSpec default_amortized_spec() {
  MlpSpec spec;
  spec.widths = {1, 8, 8, 2};
  return spec;
}

struct Session {
  ModelSpec spec;
  const Dataset* data = nullptr;
  RunConfig cfg;
  std::vector<ClientRt> clients;
  ServerRt server;
};

Session build_session(const ModelSpec& spec, const Dataset& data, const RunConfig& cfg) {
  spec.validate(data);
  Session ses;
  ses.spec = spec;
  ses.data = &data;
  ses.cfg = cfg;

  std::vector<ClientModel> models = make_client_models(spec, data, cfg.seed);
  for (int j = 0; j < data.num_clients(); ++j) {
    ClientRt rt(std::move(models[static_cast<std::size_t>(j)]));
    rt.id = j;
    const int d = rt.model.theta_dim();
    rt.factors.theta = ThetaFactor(d, cfg.theta_diagonal, 0.0, cfg.theta_init_scale);
    if (cfg.amortized) {
      MlpSpec qspec = cfg.amortized_spec.widths.empty() ? default_amortized_spec()
                                                        : cfg.amortized_spec;
      RngStream init(cfg.seed, actor_stream(3000 + static_cast<std::uint64_t>(j), 0));
      rt.factors.aux =
          AmortizedAux(qspec, spec.formulation == Formulation::Power, init);
    } else {
      rt.factors.aux = MeanFieldAux(data.n(), 0.0, cfg.z_init_scale);
    }
    rt.adam_phi = AdamState(rt.factors.theta.param_count(), cfg.adam);
    rt.adam_psi = AdamState(aux_param_count(rt.factors.aux), cfg.adam);
    if (rt.model.has_rep_net()) rt.adam_net = AdamState(rt.model.rep_net().param_count(), cfg.adam);
    rt.record_samples = cfg.record_samples;
    if (cfg.shared_y) {
      rt.y = &data.y;
      rt.offset = &data.offset;
    }
    ses.clients.push_back(std::move(rt));
  }

  ses.server.y = data.y;
  ses.server.offset = data.offset;
  ses.server.family = spec.family;
  ses.server.num_clients = data.num_clients();
  ses.server.gamma = GammaFactor(spec.intercept, spec.sigma);
  ses.server.adam_gamma = AdamState(ses.server.gamma.param_count(), cfg.adam);
  ses.server.z.assign(static_cast<std::size_t>(data.num_clients()), Vec(data.n(), 0.0));
  return ses;
}

FitResult assemble_result(Session& ses, const std::string& algorithm, double wall_ms,
                          std::uint64_t messages, std::uint64_t bytes, bool power) {
  FitResult res;
  res.algorithm = algorithm;
  res.seed = ses.cfg.seed;
  res.wall_ms = wall_ms;
  res.messages = messages;
  res.bytes = bytes;

  const std::size_t rows = ses.clients.empty() ? 0 : ses.clients[0].trace_local.size();
  for (std::size_t t = 0; t < rows; ++t) {
    TraceRow row;
    row.iteration = t + 1;
    if (power) {
      double l0 = (t < ses.server.trace_gamma.size()) ? ses.server.trace_gamma[t] : 0.0;
      for (const ClientRt& c : ses.clients) l0 += c.trace_l0j[t];
      row.server_term = l0;
    } else {
      row.server_term = ses.server.trace_l0[t];
    }
    for (const ClientRt& c : ses.clients) row.client_term += c.trace_local[t];
    row.total = row.server_term + row.client_term;
    res.trace.push_back(row);
  }

  for (ClientRt& c : ses.clients) {
    res.state.clients.push_back(c.factors);
    res.final_z.push_back(c.z_current);
    if (c.record_samples) res.theta_draws.push_back(c.theta_draws);
    if (c.model.has_rep_net()) res.rep_nets.push_back(c.model.rep_net());

    ClientFactors avg = c.factors;
    avg.theta.unpack(c.avg_phi.mean_or(c.factors.theta.pack()));
    const Vec apsi = c.avg_psi.mean_or(aux_pack(c.factors.aux));
    if (avg.amortized())
      std::get<AmortizedAux>(avg.aux).unpack(apsi);
    else
      std::get<MeanFieldAux>(avg.aux).unpack(apsi);
    res.averaged.clients.push_back(std::move(avg));
  }
  res.state.gamma = ses.server.gamma;
  res.averaged.gamma = ses.server.gamma;
  if (ses.server.gamma.param_count() > 0)
    res.averaged.gamma.unpack(ses.server.avg_gamma.mean_or(ses.server.gamma.pack()));
  return res;
}

// ---------------------------------------------------------------------------
// Federated loops (threaded, one actor per thread, any transport)
// ---------------------------------------------------------------------------

struct AbortState {
  std::atomic<bool> flag{false};
  std::atomic<std::uint64_t> iteration{0};
  std::mutex mu;
  std::string reason;

  void record(const std::string& why, std::uint64_t t, TransportNetwork& net) {
    {
      std::lock_guard<std::mutex> lock(mu);
      if (!flag.exchange(true)) {
        reason = why;
        iteration = t;
      }
    }
    net.abort(why);
  }
};

void server_loop_alg1(Session& ses, TransportNetwork& net, AbortState& abort) {
  Transport& tr = net.endpoint(0);
  std::uint64_t t = 0;
  try {
    for (int j = 0; j < ses.server.num_clients; ++j) {
      const Message m = tr.receive(0, MsgTag::AuxUpdate, j + 1, 0);
      ses.server.z[static_cast<std::size_t>(m.subject)] = m.payload;
    }
    for (t = 1; t <= static_cast<std::uint64_t>(ses.cfg.iterations); ++t) {
      const Vec deta = server_iter_alg1(ses.server, ses.cfg, t);
      for (int j = 0; j < ses.server.num_clients; ++j) {
        Message m;
        m.tag = MsgTag::ServerZGrad;
        m.run_id = ses.cfg.run_id;
        m.iteration = t;
        m.from = 0;
        m.to = j + 1;
        m.subject = j;
        m.payload = deta;
        tr.send(std::move(m));
      }
      for (int j = 0; j < ses.server.num_clients; ++j) {
        const Message m = tr.receive(0, MsgTag::AuxUpdate, j + 1, t);
        ses.server.z[static_cast<std::size_t>(m.subject)] = m.payload;
      }
    }
  } catch (const std::exception& e) {
    abort.record(e.what(), t, net);
  }
}

void client_loop_alg1(Session& ses, ClientRt& c, TransportNetwork& net, AbortState& abort) {
  Transport& tr = net.endpoint(c.id + 1);
  std::uint64_t t = 0;
  try {
    Message init;
    init.tag = MsgTag::AuxUpdate;
    init.run_id = ses.cfg.run_id;
    init.iteration = 0;
    init.from = c.id + 1;
    init.to = 0;
    init.subject = c.id;
    init.payload = client_init_z(c, ses.cfg);
    tr.send(std::move(init));

    for (t = 1; t <= static_cast<std::uint64_t>(ses.cfg.iterations); ++t) {
      const Message grad = tr.receive(c.id + 1, MsgTag::ServerZGrad, 0, t);
      client_iter_alg1(c, ses.cfg, grad.payload, ses.spec.rho, t);
      Message up;
      up.tag = MsgTag::AuxUpdate;
      up.run_id = ses.cfg.run_id;
      up.iteration = t;
      up.from = c.id + 1;
      up.to = 0;
      up.subject = c.id;
      up.payload = c.z_current;
      tr.send(std::move(up));
    }
  } catch (const std::exception& e) {
    abort.record(e.what(), t, net);
  }
}

void server_loop_alg2(Session& ses, TransportNetwork& net, AbortState& abort) {
  Transport& tr = net.endpoint(0);
  const int num_clients = ses.server.num_clients;
  std::uint64_t t = 0;
  try {
    for (int j = 0; j < num_clients; ++j) {
      const Message m = tr.receive(0, MsgTag::AuxUpdate, j + 1, 0);
      ses.server.z[static_cast<std::size_t>(m.subject)] = m.payload;
    }
    for (t = 1; t <= static_cast<std::uint64_t>(ses.cfg.iterations); ++t) {
      server_alg2_phase_a(ses.server, ses.cfg, t);
      for (int j = 0; j < num_clients; ++j) {
        Message m;
        m.tag = MsgTag::AuxBroadcast;
        m.run_id = ses.cfg.run_id;
        m.iteration = t;
        m.from = 0;
        m.to = j + 1;
        m.subject = j;
        for (int k = 0; k < num_clients; ++k)
          m.sections[k] = ses.server.z[static_cast<std::size_t>(k)];
        m.shared = {ses.server.gamma_sample.value.b, ses.server.gamma_sample.value.sigma};
        tr.send(std::move(m));
      }
      std::vector<PhaseAOut> cross(static_cast<std::size_t>(num_clients));
      for (int j = 0; j < num_clients; ++j) {
        const Message m = tr.receive(0, MsgTag::CrossGrad, j + 1, t);
        PhaseAOut& out = cross[static_cast<std::size_t>(m.from - 1)];
        // Every section carries the same vector under the additive predictor;
        // take any one of them. J=1 sends an empty map (no other clients).
        out.cross = m.sections.empty() ? Vec(ses.server.y.size(), 0.0)
                                       : m.sections.begin()->second;
        out.db = m.shared.at(0);
        out.dsigma = m.shared.at(1);
      }
      const std::vector<Vec> sums = server_alg2_phase_b(ses.server, ses.cfg, cross, t);
      for (int j = 0; j < num_clients; ++j) {
        Message m;
        m.tag = MsgTag::CrossGradSum;
        m.run_id = ses.cfg.run_id;
        m.iteration = t;
        m.from = 0;
        m.to = j + 1;
        m.subject = j;
        m.payload = sums[static_cast<std::size_t>(j)];
        tr.send(std::move(m));
      }
      for (int j = 0; j < num_clients; ++j) {
        const Message m = tr.receive(0, MsgTag::AuxUpdate, j + 1, t);
        ses.server.z[static_cast<std::size_t>(m.subject)] = m.payload;
      }
    }
  } catch (const std::exception& e) {
    abort.record(e.what(), t, net);
  }
}

void client_loop_alg2(Session& ses, ClientRt& c, TransportNetwork& net, AbortState& abort) {
  Transport& tr = net.endpoint(c.id + 1);
  const int num_clients = ses.server.num_clients;
  std::uint64_t t = 0;
  try {
    Message init;
    init.tag = MsgTag::AuxUpdate;
    init.run_id = ses.cfg.run_id;
    init.iteration = 0;
    init.from = c.id + 1;
    init.to = 0;
    init.subject = c.id;
    init.payload = client_init_z(c, ses.cfg);
    tr.send(std::move(init));

    for (t = 1; t <= static_cast<std::uint64_t>(ses.cfg.iterations); ++t) {
      const Message bc = tr.receive(c.id + 1, MsgTag::AuxBroadcast, 0, t);
      std::vector<Vec> z_all(static_cast<std::size_t>(num_clients));
      for (const auto& [k, v] : bc.sections) z_all.at(static_cast<std::size_t>(k)) = v;
      GammaValue gv;
      gv.b = bc.shared.at(0);
      gv.sigma = bc.shared.at(1);

      const PhaseAOut out = client_alg2_phase_a(c, ses.cfg, z_all, gv, num_clients, t);
      Message cg;
      cg.tag = MsgTag::CrossGrad;
      cg.run_id = ses.cfg.run_id;
      cg.iteration = t;
      cg.from = c.id + 1;
      cg.to = 0;
      cg.subject = c.id;
      for (int k = 0; k < num_clients; ++k)
        if (k != c.id) cg.sections[k] = out.cross;
      cg.shared = {out.db, out.dsigma};
      tr.send(std::move(cg));

      const Message sum = tr.receive(c.id + 1, MsgTag::CrossGradSum, 0, t);
      client_alg2_phase_b(c, ses.cfg, sum.payload, ses.spec.rho, t);
      Message up;
      up.tag = MsgTag::AuxUpdate;
      up.run_id = ses.cfg.run_id;
      up.iteration = t;
      up.from = c.id + 1;
      up.to = 0;
      up.subject = c.id;
      up.payload = c.z_current;
      tr.send(std::move(up));
    }
  } catch (const std::exception& e) {
    abort.record(e.what(), t, net);
  }
}

FitResult run_federated(const ModelSpec& spec, const Dataset& data, const RunConfig& cfg,
                        TransportNetwork* net, bool alg2) {
  Session ses = build_session(spec, data, cfg);
  std::unique_ptr<TransportNetwork> owned;
  if (net == nullptr) {
    owned = std::make_unique<InProcessNetwork>(data.num_clients() + 1);
    net = owned.get();
  }
  AbortState abort;
  const auto start = std::chrono::steady_clock::now();

  std::vector<std::thread> threads;
  threads.emplace_back([&] {
    if (alg2)
      server_loop_alg2(ses, *net, abort);
    else
      server_loop_alg1(ses, *net, abort);
  });
  for (ClientRt& c : ses.clients) {
    threads.emplace_back([&ses, &c, net, &abort, alg2] {
      if (alg2)
        client_loop_alg2(ses, c, *net, abort);
      else
        client_loop_alg1(ses, c, *net, abort);
    });
  }
  for (std::thread& th : threads) th.join();

  const double wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  FitResult res = assemble_result(ses, alg2 ? "alg2" : "alg1", wall_ms, net->total_messages(),
                                  net->total_bytes(), alg2);
  if (abort.flag.load()) {
    res.aborted = true;
    res.abort_reason = abort.reason;
    res.abort_iteration = abort.iteration.load();
    // Trim traces to the shortest completed prefix so rows stay aligned.
    std::size_t rows = res.trace.size();
    for (const ClientRt& c : ses.clients) rows = std::min(rows, c.trace_local.size());
    res.trace.resize(rows);
  }
  return res;
}

}  // namespace

VariationalState init_variational_state(const ModelSpec& spec, const Dataset& data,
                                        const std::vector<ClientModel>& models,
                                        const RunConfig& cfg) {
  VariationalState state;
  for (int j = 0; j < data.num_clients(); ++j) {
    ClientFactors f;
    f.theta = ThetaFactor(models[static_cast<std::size_t>(j)].theta_dim(), cfg.theta_diagonal,
                          0.0, cfg.theta_init_scale);
    if (cfg.amortized) {
      MlpSpec qspec =
          cfg.amortized_spec.widths.empty() ? default_amortized_spec() : cfg.amortized_spec;
      RngStream init(cfg.seed, actor_stream(3000 + static_cast<std::uint64_t>(j), 0));
      f.aux = AmortizedAux(qspec, spec.formulation == Formulation::Power, init);
    } else {
      f.aux = MeanFieldAux(data.n(), 0.0, cfg.z_init_scale);
    }
    state.clients.push_back(std::move(f));
  }
  state.gamma = GammaFactor(spec.intercept, spec.sigma);
  return state;
}

FitResult run_algorithm1(const ModelSpec& spec, const Dataset& data, const RunConfig& cfg,
                         TransportNetwork* net) {
  if (spec.formulation != Formulation::Augmented)
    throw ConfigError("algorithm 1 fits the augmented-variable formulation");
  return run_federated(spec, data, cfg, net, false);
}

FitResult run_algorithm2(const ModelSpec& spec, const Dataset& data, const RunConfig& cfg,
                         TransportNetwork* net) {
  if (spec.formulation != Formulation::Power)
    throw ConfigError("algorithm 2 fits the power-likelihood formulation");
  if (!cfg.shared_y)
    throw ConfigError("algorithm 2 requires the shared-response scenario");
  return run_federated(spec, data, cfg, net, true);
}

FitResult monolithic_reference(const ModelSpec& spec, const Dataset& data, const RunConfig& cfg) {
  if (spec.formulation == Formulation::True) return fit_true_model(spec, data, cfg);
  const bool power = spec.formulation == Formulation::Power;
  if (power && !cfg.shared_y)
    throw ConfigError("power-likelihood fits require the shared-response scenario");

  Session ses = build_session(spec, data, cfg);
  const auto start = std::chrono::steady_clock::now();
  bool aborted = false;
  std::string reason;
  std::uint64_t abort_t = 0;
  try {
    for (ClientRt& c : ses.clients)
      ses.server.z[static_cast<std::size_t>(c.id)] = client_init_z(c, ses.cfg);
    for (std::uint64_t t = 1; t <= static_cast<std::uint64_t>(cfg.iterations); ++t) {
      abort_t = t;
      if (!power) {
        const Vec deta = server_iter_alg1(ses.server, ses.cfg, t);
        for (ClientRt& c : ses.clients) {
          client_iter_alg1(c, ses.cfg, deta, spec.rho, t);
          ses.server.z[static_cast<std::size_t>(c.id)] = c.z_current;
        }
      } else {
        server_alg2_phase_a(ses.server, ses.cfg, t);
        std::vector<PhaseAOut> cross;
        for (ClientRt& c : ses.clients)
          cross.push_back(client_alg2_phase_a(c, ses.cfg, ses.server.z,
                                              ses.server.gamma_sample.value,
                                              ses.server.num_clients, t));
        const std::vector<Vec> sums = server_alg2_phase_b(ses.server, ses.cfg, cross, t);
        for (ClientRt& c : ses.clients) {
          client_alg2_phase_b(c, ses.cfg, sums[static_cast<std::size_t>(c.id)], spec.rho, t);
          ses.server.z[static_cast<std::size_t>(c.id)] = c.z_current;
        }
      }
    }
  } catch (const std::exception& e) {
    aborted = true;
    reason = e.what();
  }
  const double wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  FitResult res = assemble_result(ses, "monolithic", wall_ms, 0, 0, power);
  if (aborted) {
    res.aborted = true;
    res.abort_reason = reason;
    res.abort_iteration = abort_t;
    std::size_t rows = res.trace.size();
    for (const ClientRt& c : ses.clients) rows = std::min(rows, c.trace_local.size());
    res.trace.resize(rows);
  }
  return res;
}

FitResult fit_true_model(const ModelSpec& spec, const Dataset& data, const RunConfig& cfg) {
  if (spec.formulation != Formulation::True)
    throw ConfigError("fit_true_model expects the true-model formulation");
  if (cfg.amortized)
    throw ConfigError("the amortized family does not apply to the true model (no z)");
  if (spec.family == Family::SplitnnBernoulli)
    throw ConfigError("the true split NN is the MAP baseline; use fit_splitnn_map");

  Session ses = build_session(spec, data, cfg);
  const auto start = std::chrono::steady_clock::now();
  for (std::uint64_t t = 1; t <= static_cast<std::uint64_t>(cfg.iterations); ++t) {
    RngStream srng(cfg.seed, actor_stream(0, t));
    const GammaFactor::Sample gs = ses.server.gamma.sample(srng);

    std::vector<Vec> eps(ses.clients.size());
    Vec eta(data.n(), gs.value.b);
    if (!data.offset.empty())
      for (std::size_t i = 0; i < eta.size(); ++i) eta[i] += data.offset[i];
    for (ClientRt& c : ses.clients) {
      RngStream rng(cfg.seed, actor_stream(static_cast<std::uint64_t>(c.id) + 1, t));
      eps[static_cast<std::size_t>(c.id)] =
          rng.standard_normal_vec(static_cast<std::size_t>(c.model.theta_dim()));
      const Vec theta = c.factors.theta.sample(eps[static_cast<std::size_t>(c.id)]);
      add_in_place(eta, c.model.predictor(theta).pred);
    }
    const double lik = log_lik(spec.family, data.y, eta, gs.value.sigma);
    const Vec deta = dlog_lik_deta(spec.family, data.y, eta, gs.value.sigma);

    const double lr = lr_at(ses.cfg, t);
    double client_term = 0.0;
    for (ClientRt& c : ses.clients) {
      const ClientGrads g =
          client_step_true(c.model, c.factors.theta, deta, eps[static_cast<std::size_t>(c.id)]);
      c.factors.theta.apply_update(c.adam_phi.step(g.dphi, lr));
      client_term += g.local_elbo;
      c.trace_local.push_back(g.local_elbo);
      maybe_average(c, ses.cfg, t);
    }
    if (ses.server.gamma.param_count() > 0) {
      const double db = sum(deta);
      const double dsigma =
          spec.family == Family::LinearGaussian ? dlog_lik_dsigma(data.y, eta, gs.value.sigma)
                                                : 0.0;
      const Vec g = ses.server.gamma.stl_grads(gs, db, dsigma);
      ses.server.gamma.apply_update(ses.server.adam_gamma.step(g, lr));
    }
    ses.server.trace_l0.push_back(lik + ses.server.gamma.elbo_terms(gs));
    maybe_average(ses.server, ses.cfg, t);
  }
  const double wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return assemble_result(ses, "true-model", wall_ms, 0, 0, false);
}

FitResult fit_splitnn_map(const ModelSpec& spec, const Dataset& data, const RunConfig& cfg) {
  if (spec.family != Family::SplitnnBernoulli)
    throw ConfigError("fit_splitnn_map expects the splitnn family");

  std::vector<ClientModel> models = make_client_models(spec, data, cfg.seed);
  const int num_clients = data.num_clients();
  std::vector<Vec> w(static_cast<std::size_t>(num_clients));
  std::vector<AdamState> adam_w, adam_net;
  for (int j = 0; j < num_clients; ++j) {
    RngStream init(cfg.seed, actor_stream(4000 + static_cast<std::uint64_t>(j), 0));
    w[static_cast<std::size_t>(j)] = scale(
        init.standard_normal_vec(
            static_cast<std::size_t>(models[static_cast<std::size_t>(j)].theta_dim())),
        0.1);
    adam_w.emplace_back(w[static_cast<std::size_t>(j)].size(), cfg.adam);
    adam_net.emplace_back(models[static_cast<std::size_t>(j)].rep_net().param_count(), cfg.adam);
  }

  FitResult res;
  res.algorithm = "splitnn-map";
  res.seed = cfg.seed;
  const auto start = std::chrono::steady_clock::now();
  for (std::uint64_t t = 1; t <= static_cast<std::uint64_t>(cfg.iterations); ++t) {
    std::vector<ClientModel::PredictorEval> evals;
    Vec eta(data.n(), 0.0);
    for (int j = 0; j < num_clients; ++j) {
      evals.push_back(models[static_cast<std::size_t>(j)].predictor(w[static_cast<std::size_t>(j)]));
      add_in_place(eta, evals.back().pred);
    }
    const double lik = log_lik(Family::SplitnnBernoulli, data.y, eta, 1.0);
    const Vec deta = dlog_lik_deta(Family::SplitnnBernoulli, data.y, eta, 1.0);
    const double lr = lr_at(cfg, t);
    for (int j = 0; j < num_clients; ++j) {
      ClientModel& m = models[static_cast<std::size_t>(j)];
      Vec dw(m.theta_dim(), 0.0);
      Vec dnet(m.rep_net().param_count(), 0.0);
      m.predictor_pullback(evals[static_cast<std::size_t>(j)], deta,
                           w[static_cast<std::size_t>(j)], dw, &dnet);
      add_in_place(w[static_cast<std::size_t>(j)],
                   adam_w[static_cast<std::size_t>(j)].step(dw, lr));
      Vec flat = m.rep_net().flatten();
      add_in_place(flat, adam_net[static_cast<std::size_t>(j)].step(dnet, lr));
      m.rep_net().unflatten(flat);
    }
    res.trace.push_back({t, lik, 0.0, lik});
  }
  res.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  for (int j = 0; j < num_clients; ++j) {
    // Point estimate stored as a degenerate factor around w.
    ClientFactors f;
    f.theta = ThetaFactor(static_cast<int>(w[static_cast<std::size_t>(j)].size()), true, 0.0,
                          kScaleFloor * 2);
    Vec packed = f.theta.pack();
    for (std::size_t k = 0; k < w[static_cast<std::size_t>(j)].size(); ++k)
      packed[k] = w[static_cast<std::size_t>(j)][k];
    f.theta.unpack(packed);
    f.aux = MeanFieldAux(1, 0.0, 0.1);
    res.state.clients.push_back(std::move(f));
    res.rep_nets.push_back(models[static_cast<std::size_t>(j)].rep_net());
  }
  res.averaged = res.state;
  res.state.gamma = GammaFactor(false, spec.sigma);
  res.averaged.gamma = res.state.gamma;
  return res;
}

}  // namespace vfl
