#pragma once

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dxp/dataset.hpp"
#include "dxp/ndgrad.hpp"

namespace dxp {

/// Gaussian base distribution of the flow's latent space.
struct LatentGaussian {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;

    static LatentGaussian standard(int d);
    int dim() const { return static_cast<int>(mean.size()); }
    /// log N(z; mean, cov) for every column of `z`.
    Eigen::VectorXd log_density(const Eigen::MatrixXd& z) const;

    nlohmann::json to_json() const;
    static LatentGaussian from_json(const nlohmann::json& doc);
};

struct FlowConfig {
    int depth = 4;
    int hidden = 64;
    /// Bound on |log-scale| of each coupling layer.
    double scale_bound = 3.0;
};

struct EmConfig {
    double alpha = 1e3;
    double ridge = 1e-6;
    int batch_size = 256;
    int epochs = 500;
    double learning_rate = 1e-3;
    /// Online-EM mixing weight eta_t = max(floor, (1 + decay·t)^(-power)).
    double step_decay = 0.1;
    double step_power = 0.6;
    double step_floor = 0.01;

    double mixing_weight(long t) const;
    void validate() const;
    nlohmann::json to_json() const;
    static EmConfig from_json(const nlohmann::json& doc);
};

/// Stack of affine coupling layers f: latent z -> data x with alternating half-masks.
///
/// Layer k keeps the coordinates with (i % 2 == k % 2) fixed and applies
/// x = z·exp(s(h)) + t(h) to the rest, where h is the fixed half and
/// s = scale_bound·tanh(raw scale-net output).
class CouplingFlow {
public:
    CouplingFlow() = default;
    CouplingFlow(int d, const FlowConfig& cfg, Rng& rng, double output_scale = 0.0);

    int dim() const noexcept { return d_; }
    int depth() const noexcept { return static_cast<int>(scale_nets_.size()); }
    const FlowConfig& config() const noexcept { return cfg_; }

    /// Latent -> data. `logdet` receives log|det ∂f/∂z| per column.
    Eigen::MatrixXd forward(const Eigen::MatrixXd& z, Eigen::VectorXd* logdet = nullptr) const;
    /// Data -> latent. `logdet` receives log|det ∂f⁻¹/∂x| per column.
    Eigen::MatrixXd inverse(const Eigen::MatrixXd& x, Eigen::VectorXd* logdet = nullptr) const;

    struct Tape {
        std::vector<Eigen::MatrixXd> inputs;  // per applied layer
        std::vector<Eigen::MatrixXd> scales;  // bounded s per layer
        std::vector<Eigen::MatrixXd> shifts;  // t per layer
        std::vector<GradTape> scale_tapes, shift_tapes;
        bool inverse = false;
    };
    Eigen::MatrixXd forward(const Eigen::MatrixXd& z, Eigen::VectorXd& logdet, Tape& tape) const;
    Eigen::MatrixXd inverse(const Eigen::MatrixXd& x, Eigen::VectorXd& logdet, Tape& tape) const;
    /// Reverse pass through a recorded forward or inverse. `out_adjoint` is dL/d(output),
    /// `logdet_adjoint` is dL/d(logdet) per column. Accumulates into `grad` (flat, see
    /// parameters()) and returns dL/d(input).
    Eigen::MatrixXd backward(const Tape& tape, const Eigen::MatrixXd& out_adjoint, const Eigen::VectorXd& logdet_adjoint,
                             Eigen::VectorXd& grad) const;

    Eigen::VectorXd parameters() const;
    void set_parameters(const Eigen::VectorXd& flat);
    Eigen::Index parameter_count() const;

    nlohmann::json to_json() const;
    static CouplingFlow from_json(const nlohmann::json& doc);

private:
    Eigen::VectorXd half_mask(int layer) const;  // 1 = conditioning coordinate
    Eigen::MatrixXd apply_layer(int k, const Eigen::MatrixXd& in, bool inverse, Eigen::VectorXd& logdet, Tape* tape) const;

    int d_ = 0;
    FlowConfig cfg_;
    std::vector<DenseNet> scale_nets_;
    std::vector<DenseNet> shift_nets_;
};

/// Conditional mean of the unobserved block given the observed one.
Eigen::VectorXd e_step(const LatentGaussian& base, const Eigen::VectorXd& z, std::span<const std::uint8_t> observed);

/// Conditional covariance of the unobserved block (zero elsewhere), full d×d.
Eigen::MatrixXd conditional_covariance(const LatentGaussian& base, std::span<const std::uint8_t> observed);

/// Online M-step: mixes the batch estimate (mean, second moment about the batch mean plus
/// each sample's conditional covariance correction) with `base` using weight `eta`, then
/// adds `ridge·I`. `completed` holds one completed latent vector per column.
LatentGaussian m_step_online(const LatentGaussian& base, const Eigen::MatrixXd& completed,
                             std::span<const ObservationMask> masks, double eta, double ridge);

/// Mean observed-data log-likelihood of a Gaussian under missingness (for EM diagnostics).
double observed_log_likelihood(const LatentGaussian& base, const Eigen::MatrixXd& values,
                               std::span<const ObservationMask> masks);

struct LossAndGrad {
    double loss = 0.0;
    Eigen::VectorXd grad;
};

/// Mean negative log-likelihood of the columns of `x` under the flow pushforward of
/// `base`, with its gradient w.r.t. flow parameters (inverse route).
LossAndGrad nll_loss(const CouplingFlow& flow, const LatentGaussian& base, const Eigen::MatrixXd& x);

/// Same NLL evaluated by the forward route: z = f⁻¹(x), then log p(z) − log|det ∂f/∂z|.
double nll_forward_route(const CouplingFlow& flow, const LatentGaussian& base, const Eigen::MatrixXd& x);

/// Supervised re-optimization loss: mean over columns of
/// NLL(f(ẑ)) + alpha·‖(f(ẑ) − x_true) ⊙ weight‖², with ẑ held fixed.
LossAndGrad reconstruction_loss(const CouplingFlow& flow, const LatentGaussian& base, const Eigen::MatrixXd& z_hat,
                                const Eigen::MatrixXd& x_true, const Eigen::MatrixXd& weight, double alpha);

/// Posterior state encoder: completes x ⊙ M to a full vector in data space.
class Encoder {
public:
    Encoder() = default;
    Encoder(CouplingFlow flow, LatentGaussian base, EmConfig cfg)
        : flow_(std::move(flow)), base_(std::move(base)), cfg_(cfg) {}

    /// Identity flow of depth `cfg.depth` (output layers zero) and a standard-normal base.
    static Encoder initial(int d, const FlowConfig& flow_cfg, const EmConfig& em_cfg, std::uint64_t seed);

    int dim() const noexcept { return base_.dim(); }
    const CouplingFlow& flow() const noexcept { return flow_; }
    CouplingFlow& flow() noexcept { return flow_; }
    const LatentGaussian& base() const noexcept { return base_; }
    LatentGaussian& base() noexcept { return base_; }
    const EmConfig& config() const noexcept { return cfg_; }

    /// Observed coordinates are returned exactly; missing ones come from
    /// inverse flow -> latent conditional mean -> forward flow.
    Eigen::VectorXd impute(std::span<const double> features, const ObservationMask& mask) const;
    Eigen::VectorXd impute(const Eigen::VectorXd& masked, const ObservationMask& mask) const;

    nlohmann::json to_json() const;
    static Encoder from_json(const nlohmann::json& doc);

private:
    CouplingFlow flow_;
    LatentGaussian base_;
    EmConfig cfg_;
};

struct PretrainStats {
    long batch = 0;
    double nll = 0.0;
    double reconstruction = 0.0;
};

/// Supervised EMFlow training on masked samples whose ground truth is known.
/// Per batch: NLL step on the current imputations, latent E-step + online M-step,
/// then a reconstruction step. Throws TrainingError (with batch index) on divergence.
void pretrain(Encoder& encoder, std::span<const MaskedSample> samples, std::uint64_t seed,
              const std::function<void(const PretrainStats&)>& on_batch = {});

/// Column-mean imputation baseline (means over observed entries of `samples`).
std::vector<double> observed_column_means(std::span<const MaskedSample> samples);

}  // namespace dxp
