#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ofdft/common.hpp"
#include "ofdft/features.hpp"
#include "ofdft/ksdft.hpp"
#include "ofdft/molsys.hpp"
#include "ofdft/tape.hpp"

namespace ofdft::model {

// Width/depth of the network. hidden doubles as the perceptron hidden width;
// hidden must be divisible by heads.
struct ModelDims {
  int kernels = 32;  // Gaussian distance kernels
  int hidden = 64;   // node feature width
  int heads = 4;     // attention heads
  int blocks = 2;    // attention blocks
};

// Every learnable array under a stable name registry, plus the frozen input
// statistics and basis metadata needed to rebuild the coefficient pipeline
// for any structure. Checkpoints round-trip bit-exactly.
struct ModelParams {
  ModelDims dims;
  ksdft::Variant variant = ksdft::Variant::ts_res;
  double beta = 2.5;
  int l_max = 2;
  AnchorTable anchors;             // density-basis exponent bounds per element
  features::ElementLayout layout;  // unified per-atom dimension layout
  features::RescaleStats stats;    // frozen before training

  std::vector<std::string> names;
  std::vector<MatrixXd> values;

  int index_of(const std::string& name) const;  // -1 when absent
  MatrixXd& at(const std::string& name);        // contract_error when absent
  const MatrixXd& at(const std::string& name) const;
};

// Fresh parameters with deterministic seeded initialization. The readout and
// projection-head output layers start at zero, so an untrained model
// reproduces the atomic-reference energy exactly and predicts a zero density
// correction.
ModelParams init_model(const std::vector<int>& elements, const AnchorTable& anchors,
                       const features::RescaleStats& stats, ksdft::Variant variant,
                       double beta, int l_max, std::uint64_t seed,
                       const ModelDims& dims = {});

// lambda_co * tanh(lambda_mul * x): bounded squashing of the adapter output
// before the coefficient embedding.
double shrink_gate(double x, double lambda_co, double lambda_mul);

// Per-structure cache of everything that does not change with p or with the
// parameters' numeric values: density basis, frames + reparameterization,
// the linear adapter maps, and internuclear distances. Build once, reuse for
// every evaluation on the same geometry.
struct EvalContext {
  MolecularStructure structure;
  BasisSet basis;  // density basis
  features::StructureTransform transform;
  VectorXd w;                    // per-function volume integrals
  VectorXd scale_vec, mean_vec;  // per-function rescaling, engine order
  MatrixXd to_scaled;            // p -> network input block values (M x M)
  VectorXd atomref_grad;         // constant raw-space atomic-reference gradient
  double atomref_bias = 0.0;     // element biases + global bias
  MatrixXd distances;            // A x A internuclear distances
  std::vector<int> slot_offset, slot_dim, engine_offset;  // per atom
  // Additive attention-logit bias (A x A, default zero). Setting entries to a
  // large negative value suppresses the corresponding pair interactions; used
  // to probe non-locality.
  MatrixXd attention_bias;
};

EvalContext build_context(const MolecularStructure& s, const ModelParams& params);

// Internal observability for tests: per-block attention rows and pre-affine
// normalized features.
struct ForwardTrace {
  std::vector<MatrixXd> attention;   // one A x A matrix per (block, head)
  std::vector<MatrixXd> normalized;  // layer-norm output before scale/shift
};

// Energy of one coefficient vector (raw engine layout; the adapter is applied
// internally). The variant-taking overload validates the label convention
// against the checkpoint and rebuilds the context on the fly.
double forward(const VectorXd& p, const EvalContext& ctx, const ModelParams& params,
               ForwardTrace* trace = nullptr);
double forward(const VectorXd& p, const MolecularStructure& s, const ModelParams& params,
               ksdft::Variant variant);

// d(forward)/dp via one reverse sweep, raw engine layout.
VectorXd grad_coeffs(const VectorXd& p, const EvalContext& ctx, const ModelParams& params);
VectorXd grad_coeffs(const VectorXd& p, const MolecularStructure& s,
                     const ModelParams& params, ksdft::Variant variant);

// Projection-head correction: returns dp such that p - dp is the predicted
// projection towards the ground state, renormalized to the electron count by
// uniformly rescaling the l = 0 coefficients whenever the correction moved
// the total charge by more than 1e-8.
VectorXd project_density(const VectorXd& p, const EvalContext& ctx, const ModelParams& params);
VectorXd project_density(const VectorXd& p, const MolecularStructure& s,
                         const ModelParams& params);

struct TrainOptions {
  ElementShellTable defs;  // orbital shells; density anchors derive from these
  double beta = 2.5;
  int l_max = 2;
  int epochs = 40;
  int batch = 16;
  double lr_peak = 1e-3;
  double warmup_fraction = 0.1;
  double beta1 = 0.95;
  double beta2 = 0.99;
  double eps = 1e-8;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  ModelDims dims;
  // Frozen input statistics; fitted once on the full dataset when absent.
  std::optional<features::RescaleStats> stats;
  std::string log_path;  // per-epoch CSV when non-empty
};

struct EpochLog {
  int epoch = 0;
  double eng = 0.0, grad = 0.0, den = 0.0;           // training losses
  double val_eng = 0.0, val_grad = 0.0, val_den = 0.0;
};

struct TrainResult {
  ModelParams params;  // best-validation checkpoint
  int best_epoch = -1;
  double best_val = 0.0;
  bool aborted = false;  // loss went non-finite; params hold the last finite state
  std::vector<EpochLog> log;
};

// Weighted training: xi_eng * mean |dT| + xi_grad * mean of the projected
// gradient-residual norm + xi_den * mean distance between the predicted and
// actual correction to the structure's ground state. Zero-weight terms are
// skipped entirely.
TrainResult train(const ksdft::Dataset& dataset, double xi_eng, double xi_grad,
                  double xi_den, const TrainOptions& opts);

// Loss components of one parameter set over a whole dataset (no optimizer
// state, deterministic order). Rebuilds the input pipeline from the
// checkpoint's own metadata.
struct LossBreakdown {
  double eng = 0.0, grad = 0.0, den = 0.0;
};
LossBreakdown evaluate_losses(const ModelParams& params, const ksdft::Dataset& dataset);

// Checkpoint: ASCII magic line, one-line JSON manifest (architecture dims,
// variant, anchors, embedded statistics + their hash, parameter registry),
// then the raw little-endian float64 blob in registry order.
void save_model(const ModelParams& params, const std::string& path);
ModelParams load_model(const std::string& path);  // throws config_error

}  // namespace ofdft::model
