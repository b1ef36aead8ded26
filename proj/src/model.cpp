#include "ofdft/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ofdft/integrals.hpp"

namespace ofdft::model {

using tape::Tape;
using tape::TapeValue;

// ---------------------------------------------------------------------------
// Parameter registry
// ---------------------------------------------------------------------------

int ModelParams::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  return -1;
}

MatrixXd& ModelParams::at(const std::string& name) {
  int i = index_of(name);
  if (i < 0) throw contract_error("model parameter not found: " + name);
  return values[i];
}

const MatrixXd& ModelParams::at(const std::string& name) const {
  int i = index_of(name);
  if (i < 0) throw contract_error("model parameter not found: " + name);
  return values[i];
}

namespace {

struct TensorSpec {
  std::string name;
  int rows = 0, cols = 0;
};

std::vector<TensorSpec> registry(const ModelDims& d, const std::vector<int>& elements,
                                 int t_unified) {
  std::vector<TensorSpec> r;
  auto mlp_specs = [&r](const std::string& prefix, int in, int hidden, int out) {
    r.push_back({prefix + ".u1", hidden, in});
    r.push_back({prefix + ".b1", hidden, 1});
    r.push_back({prefix + ".u2", out, hidden});
    r.push_back({prefix + ".b2", out, 1});
  };
  r.push_back({"gbf.mu", d.kernels, 1});
  r.push_back({"gbf.sigma", d.kernels, 1});
  for (int z : elements) r.push_back({"embed.c.Z" + std::to_string(z), d.hidden, 1});
  r.push_back({"embed.gate.co", 1, 1});
  r.push_back({"embed.gate.mul", 1, 1});
  mlp_specs("embed.dist", d.kernels, d.hidden, d.hidden);
  mlp_specs("embed.coeff", t_unified, d.hidden, d.hidden);
  mlp_specs("pair", d.kernels, d.hidden, d.heads);
  int head_dim = d.hidden / d.heads;
  for (int i = 0; i < d.blocks; ++i) {
    std::string b = "block" + std::to_string(i);
    r.push_back({b + ".ln1.s", d.hidden, 1});
    r.push_back({b + ".ln1.b", d.hidden, 1});
    for (int h = 0; h < d.heads; ++h) {
      std::string hs = std::to_string(h);
      r.push_back({b + ".att.q" + hs, head_dim, d.hidden});
      r.push_back({b + ".att.k" + hs, head_dim, d.hidden});
      r.push_back({b + ".att.v" + hs, head_dim, d.hidden});
    }
    r.push_back({b + ".ln2.s", d.hidden, 1});
    r.push_back({b + ".ln2.b", d.hidden, 1});
    mlp_specs(b + ".mlp", d.hidden, d.hidden, d.hidden);
  }
  mlp_specs("readout", d.hidden, d.hidden, 1);
  mlp_specs("proj", d.hidden, d.hidden, t_unified);
  return r;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

double shrink_gate(double x, double lambda_co, double lambda_mul) {
  return lambda_co * std::tanh(lambda_mul * x);
}

ModelParams init_model(const std::vector<int>& elements, const AnchorTable& anchors,
                       const features::RescaleStats& stats, ksdft::Variant variant,
                       double beta, int l_max, std::uint64_t seed, const ModelDims& dims) {
  if (dims.hidden % dims.heads != 0)
    throw contract_error("model hidden width must be divisible by the head count");
  if (dims.kernels < 1 || dims.hidden < 1 || dims.heads < 1 || dims.blocks < 1)
    throw contract_error("model dimensions must be positive");

  ModelParams p;
  p.dims = dims;
  p.variant = variant;
  p.beta = beta;
  p.l_max = l_max;
  p.anchors = anchors;
  p.layout = features::build_layout(elements, beta, anchors, l_max);
  p.stats = stats;
  for (int z : p.layout.elements)
    if (!stats.coeff_mean.count(z) || !stats.scale.count(z) || !stats.grad_mean.count(z))
      throw contract_error("input statistics missing element " + std::to_string(z));

  RngStream rng(seed);
  auto specs = registry(dims, p.layout.elements, p.layout.total);
  for (const auto& spec : specs) {
    MatrixXd v(spec.rows, spec.cols);
    if (spec.name == "gbf.mu") {
      // Kernel centers spread over the working distance range (bohr).
      for (int k = 0; k < spec.rows; ++k)
        v(k, 0) = 16.0 * k / std::max(1, spec.rows - 1);
    } else if (spec.name == "gbf.sigma") {
      v.setConstant(1.0);
    } else if (spec.name == "embed.gate.co") {
      v.setConstant(10.0);
    } else if (spec.name == "embed.gate.mul") {
      v.setConstant(0.05);
    } else if (ends_with(spec.name, "ln1.s") || ends_with(spec.name, "ln2.s")) {
      v.setOnes();
    } else if (ends_with(spec.name, "ln1.b") || ends_with(spec.name, "ln2.b") ||
               ends_with(spec.name, ".b1") || ends_with(spec.name, ".b2")) {
      v.setZero();
    } else if (spec.name == "readout.u2" || spec.name == "proj.u2") {
      // Zeroed output layers: a fresh model reproduces the atomic reference
      // and predicts no density correction.
      v.setZero();
    } else if (spec.name.rfind("embed.c.", 0) == 0) {
      for (int i = 0; i < v.size(); ++i) v.data()[i] = 0.1 * rng.normal();
    } else {
      double s = 1.0 / std::sqrt(static_cast<double>(spec.cols));
      for (int i = 0; i < v.size(); ++i) v.data()[i] = s * rng.normal();
    }
    p.names.push_back(spec.name);
    p.values.push_back(std::move(v));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Per-structure context
// ---------------------------------------------------------------------------

EvalContext build_context(const MolecularStructure& s, const ModelParams& params) {
  EvalContext ctx;
  ctx.structure = s;
  for (int z : s.atomic_numbers)
    if (params.layout.slot(z) < 0)
      throw contract_error("structure contains element " + std::to_string(z) +
                           " outside the model's alphabet");
  ctx.basis = build_density_basis(s, params.beta, params.anchors, params.l_max);
  ctx.transform = features::build_transform(s, ctx.basis);
  ctx.w = integrals::normalization_vector(ctx.basis);

  const int m = static_cast<int>(ctx.basis.funcs.size());
  ctx.scale_vec.resize(m);
  ctx.mean_vec.resize(m);
  for (int mu = 0; mu < m; ++mu) {
    const BasisFunction& f = ctx.basis.funcs[mu];
    int z = s.atomic_numbers[f.atom];
    const VectorXd& sc = params.stats.scale.at(z);
    const VectorXd& mn = params.stats.coeff_mean.at(z);
    if (f.tau >= sc.size() || f.tau >= mn.size())
      throw contract_error("input statistics dimension mismatch for element " +
                           std::to_string(z));
    ctx.scale_vec[mu] = sc(f.tau);
    ctx.mean_vec[mu] = mn(f.tau);
  }
  MatrixXd frame = features::frame_matrix(ctx.basis, ctx.transform.frames);
  ctx.to_scaled =
      ctx.scale_vec.asDiagonal() * (ctx.transform.reparam.m.transpose() * frame);
  ctx.atomref_grad = features::atom_ref_pullback(s, ctx.basis, ctx.transform.frames,
                                                 ctx.transform.reparam, params.stats);
  ctx.atomref_bias =
      features::atom_ref(VectorXd::Zero(m), s, ctx.basis, params.stats);

  const int a_count = static_cast<int>(s.atomic_numbers.size());
  ctx.distances.resize(a_count, a_count);
  for (int a = 0; a < a_count; ++a)
    for (int b = 0; b < a_count; ++b)
      ctx.distances(a, b) = (s.coords[a] - s.coords[b]).norm();

  for (int a = 0; a < a_count; ++a) {
    int slot = params.layout.slot(s.atomic_numbers[a]);
    ctx.slot_offset.push_back(params.layout.offsets[slot]);
    ctx.slot_dim.push_back(params.layout.dims[slot]);
    ctx.engine_offset.push_back(ctx.basis.index_of(a, 0));
    if (ctx.basis.funcs_on_atom(a) != params.layout.dims[slot])
      throw contract_error("density basis size disagrees with the unified layout");
  }
  ctx.attention_bias = MatrixXd::Zero(a_count, a_count);
  return ctx;
}

// ---------------------------------------------------------------------------
// Graph construction
// ---------------------------------------------------------------------------

namespace {

struct MlpHandles {
  TapeValue u1, b1, u2, b2;
};

TapeValue apply_mlp(Tape& t, const MlpHandles& m, TapeValue x) {
  TapeValue ones = t.constant(MatrixXd::Ones(1, x.cols()));
  TapeValue h = t.add(t.matmul(m.u1, x), t.matmul(m.b1, ones));
  return t.add(t.matmul(m.u2, t.gelu(h)), t.matmul(m.b2, ones));
}

TapeValue layer_norm(Tape& t, TapeValue h, TapeValue s, TapeValue b, ForwardTrace* trace) {
  const int d = h.rows(), a = h.cols();
  TapeValue mean = t.matmul(t.constant(MatrixXd::Ones(1, d) / d), h);  // 1 x A
  TapeValue centered = t.sub(h, t.matmul(t.constant(MatrixXd::Ones(d, 1)), mean));
  TapeValue var = t.matmul(t.constant(MatrixXd::Ones(1, d) / d), t.square(centered));
  TapeValue inv = t.reciprocal(t.sqrt(var));
  TapeValue normalized =
      t.hadamard(centered, t.matmul(t.constant(MatrixXd::Ones(d, 1)), inv));
  if (trace) trace->normalized.push_back(normalized.value());
  TapeValue ones = t.constant(MatrixXd::Ones(1, a));
  return t.add(t.hadamard(t.matmul(s, ones), normalized), t.matmul(b, ones));
}

struct Graph {
  TapeValue pin;     // M x 1 coefficient leaf
  TapeValue energy;  // 1 x 1
  TapeValue head;    // M x 1 projection-head output in reparameterized space
  bool has_head = false;
  std::vector<TapeValue> theta;  // one handle per registry entry
};

Graph build_graph(Tape& t, const VectorXd& p, const EvalContext& ctx,
                  const ModelParams& mp, bool params_as_leaves, bool with_head,
                  ForwardTrace* trace) {
  const int m = static_cast<int>(ctx.basis.funcs.size());
  if (p.size() != m)
    throw contract_error("coefficient vector length does not match the density basis");
  const int a_count = static_cast<int>(ctx.structure.atomic_numbers.size());
  const int pairs = a_count * a_count;
  const ModelDims& d = mp.dims;
  const int head_dim = d.hidden / d.heads;

  Graph g;
  g.theta.reserve(mp.values.size());
  for (const MatrixXd& v : mp.values)
    g.theta.push_back(params_as_leaves ? t.input(v) : t.constant(v));
  auto P = [&](const std::string& name) {
    int i = mp.index_of(name);
    if (i < 0) throw contract_error("model parameter not found: " + name);
    return g.theta[i];
  };
  auto mlp_handles = [&](const std::string& prefix) {
    return MlpHandles{P(prefix + ".u1"), P(prefix + ".b1"), P(prefix + ".u2"),
                      P(prefix + ".b2")};
  };

  g.pin = t.input(p);

  // Adapter: scaled = diag(lambda) (M^t D p - mean), then per-atom unified
  // columns with foreign-element blocks left at zero.
  TapeValue scaled = t.sub(t.matmul(t.constant(ctx.to_scaled), g.pin),
                           t.constant(ctx.scale_vec.cwiseProduct(ctx.mean_vec)));
  std::vector<TapeValue> unified_rows;
  unified_rows.reserve(a_count);
  for (int a = 0; a < a_count; ++a) {
    TapeValue col = t.block(scaled, ctx.engine_offset[a], 0, ctx.slot_dim[a], 1);
    unified_rows.push_back(
        t.transpose(t.embed(col, mp.layout.total, 1, ctx.slot_offset[a], 0)));
  }
  TapeValue pt = t.transpose(t.vconcat(unified_rows));  // T x A

  // Gaussian distance features, K x A^2, pair (a, b) in column a + A * b.
  MatrixXd dflat(1, pairs);
  for (int b = 0; b < a_count; ++b)
    for (int a = 0; a < a_count; ++a) dflat(0, a + a_count * b) = ctx.distances(a, b);
  TapeValue ones_pairs = t.constant(MatrixXd::Ones(1, pairs));
  TapeValue dmat = t.constant(MatrixXd::Ones(d.kernels, 1) * dflat);
  TapeValue diff = t.sub(dmat, t.matmul(P("gbf.mu"), ones_pairs));
  TapeValue sigma = P("gbf.sigma");
  TapeValue inv_two_sq = t.reciprocal(t.scale(t.square(sigma), 2.0));
  TapeValue expo =
      t.exp(t.scale(t.hadamard(t.square(diff), t.matmul(inv_two_sq, ones_pairs)), -1.0));
  TapeValue coef = t.scale(t.reciprocal(sigma), 0.3989422804014326779);
  TapeValue gbf = t.hadamard(t.matmul(coef, ones_pairs), expo);  // K x A^2

  // Node embedding: per-atom GBF sums, gated coefficients, type embeddings.
  MatrixXd agg = MatrixXd::Zero(pairs, a_count);
  for (int a = 0; a < a_count; ++a)
    for (int b = 0; b < a_count; ++b) agg(a + a_count * b, a) = 1.0;
  TapeValue node_sum = t.matmul(gbf, t.constant(agg));  // K x A
  TapeValue emb_dist = apply_mlp(t, mlp_handles("embed.dist"), node_sum);
  TapeValue gated =
      t.broadcast_mul(P("embed.gate.co"), t.tanh(t.broadcast_mul(P("embed.gate.mul"), pt)));
  TapeValue emb_coeff = apply_mlp(t, mlp_handles("embed.coeff"), gated);
  TapeValue h = t.add(emb_dist, emb_coeff);
  for (std::size_t e = 0; e < mp.layout.elements.size(); ++e) {
    int z = mp.layout.elements[e];
    MatrixXd sel = MatrixXd::Zero(1, a_count);
    bool any = false;
    for (int a = 0; a < a_count; ++a)
      if (ctx.structure.atomic_numbers[a] == z) {
        sel(0, a) = 1.0;
        any = true;
      }
    if (any)
      h = t.add(h, t.matmul(P("embed.c.Z" + std::to_string(z)), t.constant(sel)));
  }

  // Pairwise attention bias features, one A x A matrix per head.
  TapeValue pair_feat = apply_mlp(t, mlp_handles("pair"), gbf);  // heads x A^2
  std::vector<TapeValue> pair_bias;
  pair_bias.reserve(d.heads);
  for (int hd = 0; hd < d.heads; ++hd)
    pair_bias.push_back(t.reshape(t.block(pair_feat, hd, 0, 1, pairs), a_count, a_count));
  TapeValue extra_bias = t.constant(ctx.attention_bias);

  for (int i = 0; i < d.blocks; ++i) {
    std::string b = "block" + std::to_string(i);
    TapeValue norm1 = layer_norm(t, h, P(b + ".ln1.s"), P(b + ".ln1.b"), trace);
    std::vector<TapeValue> heads_out;
    heads_out.reserve(d.heads);
    for (int hd = 0; hd < d.heads; ++hd) {
      std::string hs = std::to_string(hd);
      TapeValue q = t.matmul(P(b + ".att.q" + hs), norm1);
      TapeValue k = t.matmul(P(b + ".att.k" + hs), norm1);
      TapeValue v = t.matmul(P(b + ".att.v" + hs), norm1);
      TapeValue logits =
          t.add(t.add(t.scale(t.matmul(t.transpose(q), k), 1.0 / std::sqrt(head_dim)),
                      pair_bias[hd]),
                extra_bias);
      TapeValue att = t.softmax_rows(logits);
      if (trace) trace->attention.push_back(att.value());
      heads_out.push_back(t.matmul(v, t.transpose(att)));
    }
    TapeValue h2 = t.add(t.vconcat(heads_out), h);
    TapeValue norm2 = layer_norm(t, h2, P(b + ".ln2.s"), P(b + ".ln2.b"), trace);
    h = t.add(apply_mlp(t, mlp_handles(b + ".mlp"), norm2), h2);
  }

  TapeValue readout = apply_mlp(t, mlp_handles("readout"), h);  // 1 x A
  TapeValue atomref =
      t.add(t.matmul(t.constant(MatrixXd(ctx.atomref_grad.transpose())), g.pin),
            t.constant(ctx.atomref_bias));
  g.energy = t.add(t.sum(readout), atomref);

  if (with_head) {
    TapeValue head_out = apply_mlp(t, mlp_handles("proj"), h);  // T x A
    std::vector<TapeValue> parts;
    parts.reserve(a_count);
    for (int a = 0; a < a_count; ++a)
      parts.push_back(t.block(head_out, ctx.slot_offset[a], a, ctx.slot_dim[a], 1));
    g.head = t.vconcat(parts);  // M x 1, reparameterized space
    g.has_head = true;
  }
  return g;
}

void check_variant(const ModelParams& params, ksdft::Variant variant) {
  if (variant != params.variant)
    throw contract_error("variant mismatch: checkpoint models " +
                         ksdft::variant_name(params.variant) + ", caller asked for " +
                         ksdft::variant_name(variant));
}

}  // namespace

// ---------------------------------------------------------------------------
// Deployment entry points
// ---------------------------------------------------------------------------

double forward(const VectorXd& p, const EvalContext& ctx, const ModelParams& params,
               ForwardTrace* trace) {
  Tape t;
  Graph g = build_graph(t, p, ctx, params, /*params_as_leaves=*/false,
                        /*with_head=*/false, trace);
  return g.energy.scalar();
}

double forward(const VectorXd& p, const MolecularStructure& s, const ModelParams& params,
               ksdft::Variant variant) {
  check_variant(params, variant);
  EvalContext ctx = build_context(s, params);
  return forward(p, ctx, params, nullptr);
}

VectorXd grad_coeffs(const VectorXd& p, const EvalContext& ctx, const ModelParams& params) {
  Tape t;
  Graph g = build_graph(t, p, ctx, params, /*params_as_leaves=*/false,
                        /*with_head=*/false, nullptr);
  return t.gradients(g.energy, {g.pin})[0].value();
}

VectorXd grad_coeffs(const VectorXd& p, const MolecularStructure& s,
                     const ModelParams& params, ksdft::Variant variant) {
  check_variant(params, variant);
  EvalContext ctx = build_context(s, params);
  return grad_coeffs(p, ctx, params);
}

VectorXd project_density(const VectorXd& p, const EvalContext& ctx,
                         const ModelParams& params) {
  Tape t;
  Graph g = build_graph(t, p, ctx, params, /*params_as_leaves=*/false,
                        /*with_head=*/true, nullptr);
  VectorXd head = g.head.value();
  VectorXd dp_raw = features::from_local(
      features::natural_invert(head, ctx.transform.reparam), ctx.basis,
      ctx.transform.frames);

  VectorXd corrected = p - dp_raw;
  double n_electrons = static_cast<double>(ctx.structure.n_electrons);
  double moved = dp_raw.dot(ctx.w);
  if (std::abs(moved) > 1e-8) {
    double q = corrected.dot(ctx.w);
    if (std::abs(q) < 1e-10 * std::max(1.0, n_electrons))
      throw numerical_error("projection head wiped out the total charge");
    double f = n_electrons / q;
    for (int mu = 0; mu < corrected.size(); ++mu)
      if (ctx.basis.funcs[mu].l == 0) corrected[mu] *= f;
  }
  return p - corrected;
}

VectorXd project_density(const VectorXd& p, const MolecularStructure& s,
                         const ModelParams& params) {
  EvalContext ctx = build_context(s, params);
  return project_density(p, ctx, params);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

struct PreparedSample {
  int ctx_index = 0;
  const ksdft::TrainingSample* sample = nullptr;
  bool has_den = false;
  VectorXd den_label;  // reparameterized offset to the structure's ground state
};

struct PreparedData {
  std::vector<EvalContext> contexts;
  std::vector<PreparedSample> samples;
};

PreparedData prepare(const ksdft::Dataset& ds, const ModelParams& params) {
  PreparedData out;
  out.contexts.reserve(ds.structures.size());
  for (const auto& st : ds.structures)
    out.contexts.push_back(build_context(st.s, params));

  std::vector<const VectorXd*> ground(ds.structures.size(), nullptr);
  for (const auto& s : ds.samples)
    if (s.is_ground_state) ground[s.structure_id] = &s.p;

  out.samples.reserve(ds.samples.size());
  for (const auto& s : ds.samples) {
    PreparedSample ps;
    ps.ctx_index = s.structure_id;
    ps.sample = &s;
    if (ground[s.structure_id]) {
      const EvalContext& ctx = out.contexts[s.structure_id];
      ps.has_den = true;
      ps.den_label = features::natural_apply(
          features::to_local(s.p - *ground[s.structure_id], ctx.basis,
                             ctx.transform.frames),
          ctx.transform.reparam);
    }
    out.samples.push_back(std::move(ps));
  }
  return out;
}

// Projected gradient residual r - w (w.r) / (w.w) as tape operations.
TapeValue project_out_w(Tape& t, TapeValue r, const VectorXd& w) {
  MatrixXd row = w.transpose() / w.squaredNorm();
  return t.sub(r, t.matmul(t.constant(MatrixXd(w)), t.matmul(t.constant(row), r)));
}

struct SampleLoss {
  double eng = 0.0, grad = 0.0, den = 0.0;
  bool has_den = false;
};

// Evaluates one sample's loss components and, when `grads` is non-null,
// accumulates d(weighted loss)/d(theta) into it.
SampleLoss sample_loss(const PreparedSample& ps, const EvalContext& ctx,
                       const ModelParams& params, double xi_eng, double xi_grad,
                       double xi_den, std::vector<MatrixXd>* grads) {
  const ksdft::TrainingSample& s = *ps.sample;
  bool need_den = xi_den > 0.0 && ps.has_den;
  Tape t;
  Graph g = build_graph(t, s.p, ctx, params, /*params_as_leaves=*/grads != nullptr,
                        /*with_head=*/need_den, nullptr);

  SampleLoss out;
  out.has_den = ps.has_den;
  std::vector<TapeValue> terms;

  TapeValue value_err = t.abs(t.sub(g.energy, t.constant(s.value)));
  out.eng = value_err.scalar();
  if (xi_eng > 0.0) terms.push_back(t.scale(value_err, xi_eng));

  if (xi_grad > 0.0) {
    TapeValue gp = t.gradients(g.energy, {g.pin})[0];
    TapeValue resid = project_out_w(t, t.sub(gp, t.constant(MatrixXd(s.grad))), ctx.w);
    double sq_norm = resid.value().squaredNorm();
    if (sq_norm > 1e-300) {
      TapeValue n = t.norm2(resid);
      out.grad = n.scalar();
      terms.push_back(t.scale(n, xi_grad));
    }
  }

  if (need_den) {
    TapeValue resid = t.sub(g.head, t.constant(MatrixXd(ps.den_label)));
    double sq_norm = resid.value().squaredNorm();
    if (sq_norm > 1e-300) {
      TapeValue n = t.norm2(resid);
      out.den = n.scalar();
      terms.push_back(t.scale(n, xi_den));
    }
  }

  if (grads && !terms.empty()) {
    TapeValue total = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) total = t.add(total, terms[i]);
    std::vector<TapeValue> gs = t.gradients(total, g.theta);
    for (std::size_t i = 0; i < gs.size(); ++i) (*grads)[i] += gs[i].value();
  }
  return out;
}

// Loss components without parameter gradients; gradient-norm term evaluated
// only when requested (it costs one extra sweep per sample).
SampleLoss sample_loss_eval(const PreparedSample& ps, const EvalContext& ctx,
                            const ModelParams& params, bool want_grad_term,
                            bool want_den_term) {
  return sample_loss(ps, ctx, params, 1.0, want_grad_term ? 1.0 : 0.0,
                     want_den_term ? 1.0 : 0.0, nullptr);
}

}  // namespace

LossBreakdown evaluate_losses(const ModelParams& params, const ksdft::Dataset& dataset) {
  if (ksdft::parse_variant(dataset.variant) != params.variant)
    throw contract_error("dataset variant does not match the checkpoint");
  PreparedData data = prepare(dataset, params);
  LossBreakdown out;
  int n = 0, n_den = 0;
  for (const auto& ps : data.samples) {
    SampleLoss l = sample_loss_eval(ps, data.contexts[ps.ctx_index], params, true, true);
    out.eng += l.eng;
    out.grad += l.grad;
    if (l.has_den) {
      out.den += l.den;
      ++n_den;
    }
    ++n;
  }
  if (n > 0) {
    out.eng /= n;
    out.grad /= n;
  }
  if (n_den > 0) out.den /= n_den;
  return out;
}

TrainResult train(const ksdft::Dataset& dataset, double xi_eng, double xi_grad,
                  double xi_den, const TrainOptions& opts) {
  if (dataset.samples.empty()) throw contract_error("cannot train on an empty dataset");
  ksdft::Variant variant = ksdft::parse_variant(dataset.variant);
  features::RescaleStats stats =
      opts.stats ? *opts.stats
                 : features::fit_rescale_stats(dataset, opts.defs, opts.beta, opts.l_max);

  std::set<int> element_set;
  for (const auto& st : dataset.structures)
    for (int z : st.s.atomic_numbers) element_set.insert(z);
  std::vector<int> elements(element_set.begin(), element_set.end());
  AnchorTable anchors = derive_anchors(opts.defs);

  ModelParams params = init_model(elements, anchors, stats, variant, opts.beta,
                                  opts.l_max, opts.seed, opts.dims);
  PreparedData data = prepare(dataset, params);

  // Deterministic split; with fewer than two samples validation reuses the
  // training sample.
  const int n = static_cast<int>(data.samples.size());
  RngStream rng(opts.seed + 0x9E3779B97F4A7C15ull);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  int val_n = n >= 2 ? std::max(1, static_cast<int>(std::lround(opts.val_fraction * n)))
                     : 0;
  if (val_n >= n) val_n = n - 1;
  std::vector<int> val_idx(order.begin(), order.begin() + val_n);
  std::vector<int> train_idx(order.begin() + val_n, order.end());
  if (val_idx.empty()) val_idx = train_idx;
  std::sort(val_idx.begin(), val_idx.end());

  const int batch = std::max(1, opts.batch);
  const int train_n = static_cast<int>(train_idx.size());
  const int steps_per_epoch = (train_n + batch - 1) / batch;
  const long total_steps = static_cast<long>(opts.epochs) * steps_per_epoch;
  const long warmup = std::max(1L, static_cast<long>(opts.warmup_fraction * total_steps));

  std::vector<MatrixXd> adam_m, adam_v, grads;
  for (const MatrixXd& v : params.values) {
    adam_m.push_back(MatrixXd::Zero(v.rows(), v.cols()));
    adam_v.push_back(MatrixXd::Zero(v.rows(), v.cols()));
    grads.push_back(MatrixXd::Zero(v.rows(), v.cols()));
  }

  TrainResult result;
  result.best_val = std::numeric_limits<double>::infinity();
  ModelParams last_finite = params;
  ModelParams best = params;
  long step = 0;

  auto eval_set = [&](const std::vector<int>& idx, double& eng, double& grad,
                      double& den) {
    eng = grad = den = 0.0;
    int n_den = 0;
    for (int i : idx) {
      SampleLoss l = sample_loss_eval(data.samples[i], data.contexts[data.samples[i].ctx_index],
                                      params, xi_grad > 0.0, xi_den > 0.0);
      eng += l.eng;
      grad += l.grad;
      if (l.has_den) {
        den += l.den;
        ++n_den;
      }
    }
    if (!idx.empty()) {
      eng /= static_cast<double>(idx.size());
      grad /= static_cast<double>(idx.size());
    }
    if (n_den > 0) den /= n_den;
  };

  auto flush_log = [&]() {
    if (opts.log_path.empty()) return;
    std::ostringstream csv;
    csv << "epoch,eng,grad,den,val_eng,val_grad,val_den\n";
    for (const auto& row : result.log)
      csv << row.epoch << ',' << row.eng << ',' << row.grad << ',' << row.den << ','
          << row.val_eng << ',' << row.val_grad << ',' << row.val_den << '\n';
    write_text_file(opts.log_path, csv.str());
  };

  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    rng.shuffle(train_idx);
    double ep_eng = 0.0, ep_grad = 0.0, ep_den = 0.0;
    int ep_n = 0, ep_den_n = 0;

    for (int start = 0; start < train_n; start += batch) {
      int count = std::min(batch, train_n - start);
      for (auto& g : grads) g.setZero();
      bool finite = true;
      for (int k = 0; k < count; ++k) {
        const PreparedSample& ps = data.samples[train_idx[start + k]];
        SampleLoss l = sample_loss(ps, data.contexts[ps.ctx_index], params, xi_eng,
                                   xi_grad, xi_den, &grads);
        if (!std::isfinite(l.eng) || !std::isfinite(l.grad) || !std::isfinite(l.den))
          finite = false;
        ep_eng += l.eng;
        ep_grad += l.grad;
        if (l.has_den) {
          ep_den += l.den;
          ++ep_den_n;
        }
        ++ep_n;
      }
      for (const auto& g : grads)
        if (!g.allFinite()) finite = false;
      if (!finite) {
        result.aborted = true;
        result.params = last_finite;
        flush_log();
        return result;
      }

      ++step;
      double lr = step <= warmup
                      ? opts.lr_peak * static_cast<double>(step) / static_cast<double>(warmup)
                      : opts.lr_peak * static_cast<double>(total_steps - step) /
                            static_cast<double>(std::max(1L, total_steps - warmup));
      if (lr < 0.0) lr = 0.0;
      double bc1 = 1.0 - std::pow(opts.beta1, static_cast<double>(step));
      double bc2 = 1.0 - std::pow(opts.beta2, static_cast<double>(step));
      for (std::size_t i = 0; i < params.values.size(); ++i) {
        MatrixXd g = grads[i] / static_cast<double>(count);
        adam_m[i] = opts.beta1 * adam_m[i] + (1.0 - opts.beta1) * g;
        adam_v[i] = opts.beta2 * adam_v[i] + (1.0 - opts.beta2) * g.cwiseProduct(g);
        MatrixXd mhat = adam_m[i] / bc1;
        MatrixXd vhat = adam_v[i] / bc2;
        params.values[i] -=
            lr * mhat.cwiseQuotient(vhat.cwiseSqrt().array().matrix() +
                                    MatrixXd::Constant(vhat.rows(), vhat.cols(), opts.eps));
      }
    }

    bool params_finite = true;
    for (const auto& v : params.values)
      if (!v.allFinite()) params_finite = false;
    if (!params_finite) {
      result.aborted = true;
      result.params = last_finite;
      flush_log();
      return result;
    }

    EpochLog row;
    row.epoch = epoch;
    row.eng = ep_n ? ep_eng / ep_n : 0.0;
    row.grad = ep_n ? ep_grad / ep_n : 0.0;
    row.den = ep_den_n ? ep_den / ep_den_n : 0.0;
    eval_set(val_idx, row.val_eng, row.val_grad, row.val_den);
    result.log.push_back(row);
    flush_log();

    double val_total = xi_eng * row.val_eng + xi_grad * row.val_grad + xi_den * row.val_den;
    if (std::isfinite(val_total) && val_total < result.best_val) {
      result.best_val = val_total;
      result.best_epoch = epoch;
      best = params;
    }
    last_finite = params;
  }

  result.params = result.best_epoch > 0 ? best : params;
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization
// ---------------------------------------------------------------------------

void save_model(const ModelParams& params, const std::string& path) {
  std::string stats_text = features::stats_to_json(params.stats);
  nlohmann::ordered_json manifest;
  manifest["schema"] = 1;
  manifest["kind"] = "model-checkpoint";
  manifest["variant"] = ksdft::variant_name(params.variant);
  manifest["dims"] = {{"kernels", params.dims.kernels},
                      {"hidden", params.dims.hidden},
                      {"heads", params.dims.heads},
                      {"blocks", params.dims.blocks}};
  manifest["beta"] = params.beta;
  manifest["l_max"] = params.l_max;
  manifest["elements"] = params.layout.elements;
  nlohmann::ordered_json anchors = nlohmann::ordered_json::array();
  for (const auto& [z, bounds] : params.anchors) {
    nlohmann::ordered_json a;
    a["z"] = z;
    a["min_exp"] = bounds.min_exp;
    a["max_exp"] = bounds.max_exp;
    anchors.push_back(a);
  }
  manifest["anchors"] = anchors;
  manifest["layout_dims"] = params.layout.dims;
  manifest["stats"] = nlohmann::ordered_json::parse(stats_text);
  manifest["stats_hash"] = hash_hex(fnv1a64(stats_text.data(), stats_text.size()));
  nlohmann::ordered_json reg = nlohmann::ordered_json::array();
  std::size_t blob_doubles = 0;
  for (std::size_t i = 0; i < params.names.size(); ++i) {
    nlohmann::ordered_json e;
    e["name"] = params.names[i];
    e["rows"] = static_cast<int>(params.values[i].rows());
    e["cols"] = static_cast<int>(params.values[i].cols());
    reg.push_back(e);
    blob_doubles += static_cast<std::size_t>(params.values[i].size());
  }
  manifest["params"] = reg;
  manifest["blob_doubles"] = blob_doubles;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw config_error("cannot write checkpoint file: " + path);
  out << "OFDFT-MODEL 1\n" << manifest.dump() << "\n";
  for (const MatrixXd& v : params.values)
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!out) throw config_error("failed while writing checkpoint file: " + path);
}

ModelParams load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error("cannot read checkpoint file: " + path);
  std::string magic, manifest_line;
  std::getline(in, magic);
  if (magic != "OFDFT-MODEL 1")
    throw config_error(path + ": not a model checkpoint (bad magic line)");
  std::getline(in, manifest_line);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_line);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(path + ": malformed checkpoint manifest: " + e.what());
  }

  ModelParams p;
  try {
    if (manifest.at("kind").get<std::string>() != "model-checkpoint")
      throw config_error(path + ": not a model checkpoint");
    if (manifest.at("schema").get<int>() != 1)
      throw config_error(path + ": unsupported checkpoint schema");
    p.variant = ksdft::parse_variant(manifest.at("variant").get<std::string>());
    p.dims.kernels = manifest.at("dims").at("kernels").get<int>();
    p.dims.hidden = manifest.at("dims").at("hidden").get<int>();
    p.dims.heads = manifest.at("dims").at("heads").get<int>();
    p.dims.blocks = manifest.at("dims").at("blocks").get<int>();
    p.beta = manifest.at("beta").get<double>();
    p.l_max = manifest.at("l_max").get<int>();
    std::vector<int> elements = manifest.at("elements").get<std::vector<int>>();
    for (const auto& a : manifest.at("anchors")) {
      AnchorBounds b;
      b.min_exp = a.at("min_exp").get<double>();
      b.max_exp = a.at("max_exp").get<double>();
      p.anchors[a.at("z").get<int>()] = b;
    }
    p.layout = features::build_layout(elements, p.beta, p.anchors, p.l_max);
    std::vector<int> layout_dims = manifest.at("layout_dims").get<std::vector<int>>();
    if (layout_dims != p.layout.dims)
      throw config_error(path + ": layout dimensions disagree with basis metadata");

    std::string stats_text = manifest.at("stats").dump();
    p.stats = features::stats_from_json(stats_text, path);
    std::string canonical = features::stats_to_json(p.stats);
    std::string expect = hash_hex(fnv1a64(canonical.data(), canonical.size()));
    if (manifest.at("stats_hash").get<std::string>() != expect)
      throw config_error(path + ": statistics hash mismatch");

    std::size_t blob_doubles = manifest.at("blob_doubles").get<std::size_t>();
    std::size_t total = 0;
    for (const auto& e : manifest.at("params")) {
      std::string name = e.at("name").get<std::string>();
      int rows = e.at("rows").get<int>();
      int cols = e.at("cols").get<int>();
      if (rows < 0 || cols < 0) throw config_error(path + ": negative tensor shape");
      MatrixXd v(rows, cols);
      in.read(reinterpret_cast<char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
      if (!in) throw config_error(path + ": checkpoint blob truncated");
      p.names.push_back(name);
      p.values.push_back(std::move(v));
      total += static_cast<std::size_t>(rows) * cols;
    }
    if (total != blob_doubles)
      throw config_error(path + ": parameter registry disagrees with blob size");
  } catch (const nlohmann::json::exception& e) {
    throw config_error(path + ": malformed checkpoint manifest: " + e.what());
  }

  // Shape sanity against the declared architecture.
  auto specs = registry(p.dims, p.layout.elements, p.layout.total);
  if (specs.size() != p.names.size())
    throw config_error(path + ": parameter registry size mismatch");
  for (std::size_t i = 0; i < specs.size(); ++i)
    if (specs[i].name != p.names[i] || specs[i].rows != p.values[i].rows() ||
        specs[i].cols != p.values[i].cols())
      throw config_error(path + ": parameter registry entry mismatch at " + specs[i].name);
  return p;
}

}  // namespace ofdft::model
