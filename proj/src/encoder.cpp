#include "dxp/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <string>

#include "dxp/error.hpp"

namespace dxp {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2π)

std::vector<int> indices_where(std::span<const std::uint8_t> bits, bool value) {
    std::vector<int> out;
    for (std::size_t i = 0; i < bits.size(); ++i)
        if ((bits[i] != 0) == value) out.push_back(static_cast<int>(i));
    return out;
}

Eigen::MatrixXd select(const Eigen::MatrixXd& m, const std::vector<int>& rows, const std::vector<int>& cols) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(rows[i], cols[j]);
    return out;
}

Eigen::VectorXd select(const Eigen::VectorXd& v, const std::vector<int>& idx) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[idx[i]];
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// LatentGaussian

LatentGaussian LatentGaussian::standard(int d) {
    return {Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Identity(d, d)};
}

Eigen::VectorXd LatentGaussian::log_density(const Eigen::MatrixXd& z) const {
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw NumericError("latent covariance is not positive definite");
    const Eigen::MatrixXd centered = z.colwise() - mean;
    const Eigen::MatrixXd y = llt.matrixL().solve(centered);
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    const double d = static_cast<double>(mean.size());
    return (-0.5 * y.colwise().squaredNorm().array() - 0.5 * (log_det + d * kLog2Pi)).matrix().transpose();
}

nlohmann::json LatentGaussian::to_json() const { return {{"mean", vector_to_json(mean)}, {"cov", matrix_to_json(cov)}}; }

LatentGaussian LatentGaussian::from_json(const nlohmann::json& doc) {
    return {vector_from_json(doc.at("mean")), matrix_from_json(doc.at("cov"))};
}

// ---------------------------------------------------------------------------
// EmConfig

double EmConfig::mixing_weight(long t) const {
    const double eta = std::pow(1.0 + step_decay * static_cast<double>(t), -step_power);
    return std::clamp(eta, step_floor, 1.0);
}

void EmConfig::validate() const {
    if (!(alpha >= 0.0)) throw ConfigError("encoder.em.alpha", "must be >= 0");
    if (!(ridge >= 0.0)) throw ConfigError("encoder.em.ridge", "must be >= 0");
    if (batch_size < 1) throw ConfigError("encoder.em.batch_size", "must be >= 1");
    if (epochs < 0) throw ConfigError("encoder.em.epochs", "must be >= 0");
    if (!(step_floor > 0.0 && step_floor <= 1.0)) throw ConfigError("encoder.em.step_floor", "must lie in (0,1]");
}

nlohmann::json EmConfig::to_json() const {
    return {{"alpha", alpha}, {"ridge", ridge}, {"batch_size", batch_size}, {"epochs", epochs},
            {"learning_rate", learning_rate}, {"step_decay", step_decay}, {"step_power", step_power},
            {"step_floor", step_floor}};
}

EmConfig EmConfig::from_json(const nlohmann::json& doc) {
    EmConfig c;
    c.alpha = doc.value("alpha", c.alpha);
    c.ridge = doc.value("ridge", c.ridge);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.epochs = doc.value("epochs", c.epochs);
    c.learning_rate = doc.value("learning_rate", c.learning_rate);
    c.step_decay = doc.value("step_decay", c.step_decay);
    c.step_power = doc.value("step_power", c.step_power);
    c.step_floor = doc.value("step_floor", c.step_floor);
    return c;
}

// ---------------------------------------------------------------------------
// CouplingFlow

CouplingFlow::CouplingFlow(int d, const FlowConfig& cfg, Rng& rng, double output_scale) : d_(d), cfg_(cfg) {
    if (d < 1) throw ContractError("flow dimension must be >= 1");
    if (cfg.depth < 0 || cfg.hidden < 1) throw ConfigError("encoder.flow", "depth must be >= 0 and hidden >= 1");
    for (int k = 0; k < cfg.depth; ++k) {
        scale_nets_.emplace_back(std::vector<int>{d, cfg.hidden, d}, Activation::Tanh, rng, output_scale);
        shift_nets_.emplace_back(std::vector<int>{d, cfg.hidden, d}, Activation::Tanh, rng, output_scale);
    }
}

Eigen::VectorXd CouplingFlow::half_mask(int layer) const {
    Eigen::VectorXd m(d_);
    for (int i = 0; i < d_; ++i) m[i] = (i % 2 == layer % 2) ? 1.0 : 0.0;
    return m;
}

Eigen::MatrixXd CouplingFlow::apply_layer(int k, const Eigen::MatrixXd& in, bool inverse, Eigen::VectorXd& logdet,
                                          Tape* tape) const {
    const auto uk = static_cast<std::size_t>(k);
    const Eigen::VectorXd m = half_mask(k);
    const Eigen::VectorXd om = Eigen::VectorXd::Ones(d_) - m;
    const Eigen::MatrixXd h = in.array().colwise() * m.array();

    GradTape ts, tt;
    Eigen::MatrixXd raw = tape ? scale_nets_[uk].forward(h, ts) : scale_nets_[uk].forward(h);
    Eigen::MatrixXd t = tape ? shift_nets_[uk].forward(h, tt) : shift_nets_[uk].forward(h);
    Eigen::MatrixXd s = (cfg_.scale_bound * raw.array().tanh()).colwise() * om.array();
    t = t.array().colwise() * om.array();

    Eigen::MatrixXd out;
    if (!inverse) {
        out = (in.array() * s.array().exp() + t.array()).matrix();
        logdet += s.colwise().sum().transpose();
    } else {
        out = ((in - t).array() * (-s.array()).exp()).matrix();
        logdet -= s.colwise().sum().transpose();
    }
    if (tape) {
        tape->inputs.push_back(in);
        tape->scales.push_back(std::move(s));
        tape->shifts.push_back(std::move(t));
        tape->scale_tapes.push_back(std::move(ts));
        tape->shift_tapes.push_back(std::move(tt));
    }
    return out;
}

Eigen::MatrixXd CouplingFlow::forward(const Eigen::MatrixXd& z, Eigen::VectorXd* logdet) const {
    if (z.rows() != d_) throw ContractError("flow input has wrong dimension");
    Eigen::VectorXd ld = Eigen::VectorXd::Zero(z.cols());
    Eigen::MatrixXd x = z;
    for (int k = 0; k < depth(); ++k) x = apply_layer(k, x, false, ld, nullptr);
    if (logdet) *logdet = std::move(ld);
    return x;
}

Eigen::MatrixXd CouplingFlow::inverse(const Eigen::MatrixXd& x, Eigen::VectorXd* logdet) const {
    if (x.rows() != d_) throw ContractError("flow input has wrong dimension");
    Eigen::VectorXd ld = Eigen::VectorXd::Zero(x.cols());
    Eigen::MatrixXd z = x;
    for (int k = depth() - 1; k >= 0; --k) z = apply_layer(k, z, true, ld, nullptr);
    if (logdet) *logdet = std::move(ld);
    return z;
}

Eigen::MatrixXd CouplingFlow::forward(const Eigen::MatrixXd& z, Eigen::VectorXd& logdet, Tape& tape) const {
    if (z.rows() != d_) throw ContractError("flow input has wrong dimension");
    tape = Tape{};
    tape.inverse = false;
    logdet = Eigen::VectorXd::Zero(z.cols());
    Eigen::MatrixXd x = z;
    for (int k = 0; k < depth(); ++k) x = apply_layer(k, x, false, logdet, &tape);
    return x;
}

Eigen::MatrixXd CouplingFlow::inverse(const Eigen::MatrixXd& x, Eigen::VectorXd& logdet, Tape& tape) const {
    if (x.rows() != d_) throw ContractError("flow input has wrong dimension");
    tape = Tape{};
    tape.inverse = true;
    logdet = Eigen::VectorXd::Zero(x.cols());
    Eigen::MatrixXd z = x;
    for (int k = depth() - 1; k >= 0; --k) z = apply_layer(k, z, true, logdet, &tape);
    return z;
}

Eigen::MatrixXd CouplingFlow::backward(const Tape& tape, const Eigen::MatrixXd& out_adjoint,
                                       const Eigen::VectorXd& logdet_adjoint, Eigen::VectorXd& grad) const {
    if (grad.size() == 0) grad = Eigen::VectorXd::Zero(parameter_count());
    if (grad.size() != parameter_count()) throw ContractError("flow gradient has wrong size");

    std::vector<Eigen::Index> offsets;
    Eigen::Index off = 0;
    for (int k = 0; k < depth(); ++k) {
        offsets.push_back(off);
        off += scale_nets_[static_cast<std::size_t>(k)].parameter_count() + shift_nets_[static_cast<std::size_t>(k)].parameter_count();
    }

    const auto n_applied = tape.inputs.size();
    Eigen::MatrixXd adj = out_adjoint;
    const Eigen::RowVectorXd g = logdet_adjoint.transpose();
    for (std::size_t step = n_applied; step-- > 0;) {
        // Applied order: forward uses layers 0..K-1, inverse uses K-1..0.
        const int k = tape.inverse ? depth() - 1 - static_cast<int>(step) : static_cast<int>(step);
        const auto uk = static_cast<std::size_t>(k);
        const Eigen::VectorXd m = half_mask(k);
        const Eigen::VectorXd om = Eigen::VectorXd::Ones(d_) - m;
        const Eigen::MatrixXd& in = tape.inputs[step];
        const Eigen::MatrixXd& s = tape.scales[step];
        const Eigen::MatrixXd& t = tape.shifts[step];

        Eigen::MatrixXd d_in, dt, ds;
        if (!tape.inverse) {
            const Eigen::ArrayXXd es = s.array().exp();
            d_in = (adj.array() * es).matrix();
            dt = adj.array().colwise() * om.array();
            ds = ((adj.array() * in.array() * es).rowwise() + g.array()).colwise() * om.array();
        } else {
            const Eigen::ArrayXXd e = (-s.array()).exp();
            const Eigen::ArrayXXd out = (in - t).array() * e;
            d_in = (adj.array() * e).matrix();
            dt = (-(adj.array() * e)).colwise() * om.array();
            ds = ((-(adj.array() * out)).rowwise() - g.array()).colwise() * om.array();
        }
        const double b = cfg_.scale_bound;
        const Eigen::MatrixXd d_raw = (ds.array() * (b - s.array().square() / b)).matrix();

        const auto& snet = scale_nets_[uk];
        const auto& tnet = shift_nets_[uk];
        Eigen::VectorXd gs = Eigen::VectorXd::Zero(snet.parameter_count());
        Eigen::VectorXd gt = Eigen::VectorXd::Zero(tnet.parameter_count());
        Eigen::MatrixXd dh = snet.backward(tape.scale_tapes[step], d_raw, gs);
        dh += tnet.backward(tape.shift_tapes[step], dt, gt);
        grad.segment(offsets[uk], gs.size()) += gs;
        grad.segment(offsets[uk] + gs.size(), gt.size()) += gt;
        d_in += (dh.array().colwise() * m.array()).matrix();
        adj = std::move(d_in);
    }
    return adj;
}

Eigen::Index CouplingFlow::parameter_count() const {
    Eigen::Index n = 0;
    for (int k = 0; k < depth(); ++k)
        n += scale_nets_[static_cast<std::size_t>(k)].parameter_count() + shift_nets_[static_cast<std::size_t>(k)].parameter_count();
    return n;
}

Eigen::VectorXd CouplingFlow::parameters() const {
    Eigen::VectorXd flat(parameter_count());
    Eigen::Index off = 0;
    for (int k = 0; k < depth(); ++k) {
        const auto uk = static_cast<std::size_t>(k);
        flat.segment(off, scale_nets_[uk].parameter_count()) = scale_nets_[uk].parameters();
        off += scale_nets_[uk].parameter_count();
        flat.segment(off, shift_nets_[uk].parameter_count()) = shift_nets_[uk].parameters();
        off += shift_nets_[uk].parameter_count();
    }
    return flat;
}

void CouplingFlow::set_parameters(const Eigen::VectorXd& flat) {
    if (flat.size() != parameter_count()) throw ContractError("flow parameter vector has wrong size");
    Eigen::Index off = 0;
    for (int k = 0; k < depth(); ++k) {
        const auto uk = static_cast<std::size_t>(k);
        scale_nets_[uk].parameters() = flat.segment(off, scale_nets_[uk].parameter_count());
        off += scale_nets_[uk].parameter_count();
        shift_nets_[uk].parameters() = flat.segment(off, shift_nets_[uk].parameter_count());
        off += shift_nets_[uk].parameter_count();
    }
}

nlohmann::json CouplingFlow::to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    for (int k = 0; k < depth(); ++k)
        layers.push_back({{"scale", scale_nets_[static_cast<std::size_t>(k)].to_json()},
                          {"shift", shift_nets_[static_cast<std::size_t>(k)].to_json()}});
    return {{"dim", d_}, {"depth", cfg_.depth}, {"hidden", cfg_.hidden}, {"scale_bound", cfg_.scale_bound}, {"layers", layers}};
}

CouplingFlow CouplingFlow::from_json(const nlohmann::json& doc) {
    CouplingFlow f;
    f.d_ = doc.at("dim").get<int>();
    f.cfg_.depth = doc.at("depth").get<int>();
    f.cfg_.hidden = doc.at("hidden").get<int>();
    f.cfg_.scale_bound = doc.at("scale_bound").get<double>();
    for (const auto& layer : doc.at("layers")) {
        f.scale_nets_.push_back(DenseNet::from_json(layer.at("scale")));
        f.shift_nets_.push_back(DenseNet::from_json(layer.at("shift")));
    }
    if (static_cast<int>(f.scale_nets_.size()) != f.cfg_.depth) throw SchemaError("flow depth mismatch");
    return f;
}

// ---------------------------------------------------------------------------
// EM in latent space

Eigen::VectorXd e_step(const LatentGaussian& base, const Eigen::VectorXd& z, std::span<const std::uint8_t> observed) {
    const auto obs = indices_where(observed, true);
    const auto mis = indices_where(observed, false);
    Eigen::VectorXd out = z;
    if (mis.empty()) return out;
    if (obs.empty()) {
        for (int i : mis) out[i] = base.mean[i];
        return out;
    }
    const Eigen::MatrixXd s_oo = select(base.cov, obs, obs);
    const Eigen::MatrixXd s_mo = select(base.cov, mis, obs);
    const Eigen::VectorXd resid = select(z, obs) - select(base.mean, obs);
    const Eigen::VectorXd cond = select(base.mean, mis) + s_mo * s_oo.ldlt().solve(resid);
    for (std::size_t i = 0; i < mis.size(); ++i) out[mis[i]] = cond[static_cast<Eigen::Index>(i)];
    return out;
}

Eigen::MatrixXd conditional_covariance(const LatentGaussian& base, std::span<const std::uint8_t> observed) {
    const int d = base.dim();
    const auto obs = indices_where(observed, true);
    const auto mis = indices_where(observed, false);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(d, d);
    if (mis.empty()) return out;
    Eigen::MatrixXd c = select(base.cov, mis, mis);
    if (!obs.empty()) {
        const Eigen::MatrixXd s_oo = select(base.cov, obs, obs);
        const Eigen::MatrixXd s_mo = select(base.cov, mis, obs);
        c -= s_mo * s_oo.ldlt().solve(s_mo.transpose());
    }
    for (std::size_t i = 0; i < mis.size(); ++i)
        for (std::size_t j = 0; j < mis.size(); ++j) out(mis[i], mis[j]) = c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    return out;
}

LatentGaussian m_step_online(const LatentGaussian& base, const Eigen::MatrixXd& completed,
                             std::span<const ObservationMask> masks, double eta, double ridge) {
    const auto n = completed.cols();
    if (n == 0) throw ContractError("M-step needs a nonempty batch");
    if (static_cast<std::size_t>(n) != masks.size()) throw ContractError("M-step: one mask per sample required");
    if (!(eta > 0.0 && eta <= 1.0)) throw ContractError("M-step mixing weight must lie in (0,1]");
    const int d = base.dim();

    const Eigen::VectorXd batch_mean = completed.rowwise().mean();
    const Eigen::MatrixXd centered = completed.colwise() - batch_mean;
    Eigen::MatrixXd second = centered * centered.transpose();

    std::map<std::vector<std::uint8_t>, std::size_t> pattern_counts;
    for (const auto& m : masks) ++pattern_counts[std::vector<std::uint8_t>(m.bits().begin(), m.bits().end())];
    for (const auto& [bits, count] : pattern_counts)
        second += static_cast<double>(count) * conditional_covariance(base, bits);
    second /= static_cast<double>(n);

    LatentGaussian out;
    out.mean = eta * batch_mean + (1.0 - eta) * base.mean;
    out.cov = eta * second + (1.0 - eta) * base.cov;
    out.cov = 0.5 * (out.cov + out.cov.transpose());
    out.cov += ridge * Eigen::MatrixXd::Identity(d, d);
    return out;
}

double observed_log_likelihood(const LatentGaussian& base, const Eigen::MatrixXd& values,
                               std::span<const ObservationMask> masks) {
    double total = 0.0;
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
        const auto obs = indices_where(masks[static_cast<std::size_t>(c)].bits(), true);
        if (obs.empty()) continue;
        LatentGaussian marginal{select(base.mean, obs), select(base.cov, obs, obs)};
        total += marginal.log_density(select(Eigen::VectorXd(values.col(c)), obs))[0];
    }
    return total / static_cast<double>(values.cols());
}

// ---------------------------------------------------------------------------
// Losses

LossAndGrad nll_loss(const CouplingFlow& flow, const LatentGaussian& base, const Eigen::MatrixXd& x) {
    require_finite(x, "flow input");
    const double n = static_cast<double>(x.cols());
    CouplingFlow::Tape tape;
    Eigen::VectorXd logdet_inv;
    const Eigen::MatrixXd z = flow.inverse(x, logdet_inv, tape);
    Eigen::LLT<Eigen::MatrixXd> llt(base.cov);
    if (llt.info() != Eigen::Success) throw NumericError("latent covariance is singular");

    LossAndGrad out;
    out.loss = -(base.log_density(z).sum() + logdet_inv.sum()) / n;
    const Eigen::MatrixXd dz = llt.solve(Eigen::MatrixXd(z.colwise() - base.mean)) / n;
    const Eigen::VectorXd dlogdet = Eigen::VectorXd::Constant(x.cols(), -1.0 / n);
    out.grad = Eigen::VectorXd::Zero(flow.parameter_count());
    if (flow.depth() > 0) flow.backward(tape, dz, dlogdet, out.grad);
    return out;
}

double nll_forward_route(const CouplingFlow& flow, const LatentGaussian& base, const Eigen::MatrixXd& x) {
    const Eigen::MatrixXd z = flow.inverse(x);
    Eigen::VectorXd logdet_fwd;
    flow.forward(z, &logdet_fwd);
    return -(base.log_density(z).sum() - logdet_fwd.sum()) / static_cast<double>(x.cols());
}

LossAndGrad reconstruction_loss(const CouplingFlow& flow, const LatentGaussian& base, const Eigen::MatrixXd& z_hat,
                                const Eigen::MatrixXd& x_true, const Eigen::MatrixXd& weight, double alpha) {
    const double n = static_cast<double>(z_hat.cols());
    CouplingFlow::Tape tape;
    Eigen::VectorXd logdet;
    const Eigen::MatrixXd x = flow.forward(z_hat, logdet, tape);
    const Eigen::ArrayXXd resid = (x - x_true).array() * weight.array();

    LossAndGrad out;
    out.loss = (logdet.sum() - base.log_density(z_hat).sum() + alpha * resid.square().sum()) / n;
    const Eigen::MatrixXd dx = (2.0 * alpha / n) * (resid * weight.array()).matrix();
    const Eigen::VectorXd dlogdet = Eigen::VectorXd::Constant(z_hat.cols(), 1.0 / n);
    out.grad = Eigen::VectorXd::Zero(flow.parameter_count());
    if (flow.depth() > 0) flow.backward(tape, dx, dlogdet, out.grad);
    return out;
}

// ---------------------------------------------------------------------------
// Encoder

Encoder Encoder::initial(int d, const FlowConfig& flow_cfg, const EmConfig& em_cfg, std::uint64_t seed) {
    em_cfg.validate();
    Rng rng(seed);
    return Encoder(CouplingFlow(d, flow_cfg, rng, 0.0), LatentGaussian::standard(d), em_cfg);
}

Eigen::VectorXd Encoder::impute(const Eigen::VectorXd& masked, const ObservationMask& mask) const {
    if (masked.size() != dim() || mask.size() != static_cast<std::size_t>(dim())) throw ContractError("impute: dimension mismatch");
    if (!masked.allFinite()) throw ContractError("impute: non-finite input");
    Eigen::VectorXd filled = masked;
    for (int i = 0; i < dim(); ++i)
        if (!mask[static_cast<std::size_t>(i)]) filled[i] = 0.0;
    const Eigen::VectorXd z = flow_.inverse(filled).col(0);
    const Eigen::VectorXd z_hat = e_step(base_, z, mask.bits());
    const Eigen::VectorXd x_tilde = flow_.forward(z_hat).col(0);
    Eigen::VectorXd out = filled;
    for (int i = 0; i < dim(); ++i)
        if (!mask[static_cast<std::size_t>(i)]) out[i] = x_tilde[i];
    return out;
}

Eigen::VectorXd Encoder::impute(std::span<const double> features, const ObservationMask& mask) const {
    return impute(masked_features(features, mask), mask);
}

nlohmann::json Encoder::to_json() const {
    return {{"format", "dxp-encoder"}, {"version", 1}, {"flow", flow_.to_json()}, {"base", base_.to_json()},
            {"config", cfg_.to_json()}};
}

Encoder Encoder::from_json(const nlohmann::json& doc) {
    try {
        if (doc.at("format") != "dxp-encoder" || doc.at("version") != 1) throw SchemaError("unsupported encoder checkpoint");
        return Encoder(CouplingFlow::from_json(doc.at("flow")), LatentGaussian::from_json(doc.at("base")),
                       EmConfig::from_json(doc.at("config")));
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("encoder checkpoint: ") + e.what());
    }
}

void pretrain(Encoder& encoder, std::span<const MaskedSample> samples, std::uint64_t seed,
              const std::function<void(const PretrainStats&)>& on_batch) {
    const EmConfig& cfg = encoder.config();
    cfg.validate();
    const int d = encoder.dim();
    const auto n = static_cast<Eigen::Index>(samples.size());
    if (n == 0) throw ContractError("pretrain needs samples");

    Eigen::MatrixXd truth(d, n), current(d, n), weight(d, n);
    for (Eigen::Index c = 0; c < n; ++c) {
        const auto& s = samples[static_cast<std::size_t>(c)];
        if (s.features.size() != static_cast<std::size_t>(d)) throw ContractError("pretrain: sample dimension mismatch");
        for (int i = 0; i < d; ++i) {
            const auto ui = static_cast<std::size_t>(i);
            truth(i, c) = s.features[ui];
            current(i, c) = s.mask[ui] ? s.features[ui] : 0.0;
            weight(i, c) = (!s.source_missing.empty() && s.source_missing[ui]) ? 0.0 : 1.0;
        }
    }

    CouplingFlow& flow = encoder.flow();
    const bool trainable = flow.parameter_count() > 0;
    Eigen::VectorXd theta = flow.parameters();
    Adam opt(theta.size());

    Rng rng(seed);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    long batch_no = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
            const Eigen::Index len = std::min<Eigen::Index>(cfg.batch_size, n - start);
            Eigen::MatrixXd xb(d, len), tb(d, len), wb(d, len);
            std::vector<ObservationMask> masks;
            masks.reserve(static_cast<std::size_t>(len));
            for (Eigen::Index j = 0; j < len; ++j) {
                const auto c = order[static_cast<std::size_t>(start + j)];
                xb.col(j) = current.col(c);
                tb.col(j) = truth.col(c);
                wb.col(j) = weight.col(c);
                masks.push_back(samples[static_cast<std::size_t>(c)].mask);
            }
            ++batch_no;
            PretrainStats stats;
            stats.batch = batch_no;

            // 1. Flow step on the likelihood of the current imputations.
            if (trainable) {
                const auto l1 = nll_loss(flow, encoder.base(), xb);
                if (!std::isfinite(l1.loss) || !l1.grad.allFinite() || l1.loss > 1e12)
                    throw TrainingError("encoder pretraining diverged at batch " + std::to_string(batch_no));
                stats.nll = l1.loss;
                opt.step(theta, l1.grad, cfg.learning_rate);
                flow.set_parameters(theta);
            }

            // 2. Latent E-step with the previous base estimate, then online M-step.
            const Eigen::MatrixXd z = flow.inverse(xb);
            Eigen::MatrixXd z_hat(d, len);
            for (Eigen::Index j = 0; j < len; ++j)
                z_hat.col(j) = e_step(encoder.base(), z.col(j), masks[static_cast<std::size_t>(j)].bits());
            encoder.base() = m_step_online(encoder.base(), z_hat, masks, cfg.mixing_weight(batch_no), cfg.ridge);
            if (!encoder.base().cov.allFinite())
                throw TrainingError("encoder pretraining diverged at batch " + std::to_string(batch_no));

            // 3. Supervised reconstruction step; 4. refresh the current imputations.
            const Eigen::MatrixXd x_tilde = flow.forward(z_hat);
            if (trainable) {
                const auto l2 = reconstruction_loss(flow, encoder.base(), z_hat, tb, wb, cfg.alpha);
                if (!std::isfinite(l2.loss) || !l2.grad.allFinite())
                    throw TrainingError("encoder pretraining diverged at batch " + std::to_string(batch_no));
                stats.reconstruction = l2.loss;
                opt.step(theta, l2.grad, cfg.learning_rate);
                flow.set_parameters(theta);
            }
            for (Eigen::Index j = 0; j < len; ++j) {
                const auto c = order[static_cast<std::size_t>(start + j)];
                const auto& mask = masks[static_cast<std::size_t>(j)];
                for (int i = 0; i < d; ++i)
                    if (!mask[static_cast<std::size_t>(i)]) current(i, c) = x_tilde(i, j);
            }
            if (on_batch) on_batch(stats);
        }
    }
}

std::vector<double> observed_column_means(std::span<const MaskedSample> samples) {
    if (samples.empty()) return {};
    const std::size_t d = samples.front().features.size();
    std::vector<double> sum(d, 0.0);
    std::vector<std::size_t> count(d, 0);
    for (const auto& s : samples) {
        for (std::size_t i = 0; i < d; ++i) {
            if (!s.mask[i] || (!s.source_missing.empty() && s.source_missing[i])) continue;
            sum[i] += s.features[i];
            ++count[i];
        }
    }
    for (std::size_t i = 0; i < d; ++i) sum[i] = count[i] ? sum[i] / static_cast<double>(count[i]) : 0.0;
    return sum;
}

}  // namespace dxp
