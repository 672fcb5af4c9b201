#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "iftk/common.hpp"
#include "iftk/dataset.hpp"

namespace iftk {

enum class Activation { Tanh, Relu };

inline std::string to_string(Activation a) {
    return a == Activation::Tanh ? "tanh" : "relu";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::Relu;
    throw config_error("unknown activation '" + s + "' (expected tanh or relu)");
}

/// Architecture of a dense feed-forward classifier. Empty hidden_widths
/// yields multinomial logistic regression (the convex case).
struct ModelSpec {
    int input_dim = 0;
    std::vector<int> hidden_widths;
    int num_classes = 0;
    Activation activation = Activation::Tanh;

    int depth() const { return static_cast<int>(hidden_widths.size()); }

    /// [input_dim, hidden..., num_classes]
    std::vector<int> layer_dims() const {
        std::vector<int> dims;
        dims.push_back(input_dim);
        dims.insert(dims.end(), hidden_widths.begin(), hidden_widths.end());
        dims.push_back(num_classes);
        return dims;
    }

    int param_count() const {
        const auto dims = layer_dims();
        int p = 0;
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            p += dims[l] * dims[l + 1] + dims[l + 1];
        }
        return p;
    }

    void validate() const {
        require(input_dim > 0, "ModelSpec: input_dim must be positive");
        require(num_classes >= 2, "ModelSpec: num_classes must be >= 2");
        for (int w : hidden_widths) require(w > 0, "ModelSpec: hidden widths must be positive");
    }

    void hash_into(Fnv1a& h) const {
        h.add(input_dim);
        h.add(static_cast<std::uint64_t>(hidden_widths.size()));
        for (int w : hidden_widths) h.add(w);
        h.add(num_classes);
        h.add(to_string(activation));
    }

    bool operator==(const ModelSpec& o) const {
        return input_dim == o.input_dim && hidden_widths == o.hidden_widths &&
               num_classes == o.num_classes && activation == o.activation;
    }
};

inline constexpr const char* kInitScheme = "scaled_uniform(1/sqrt(fan_in)), zero biases";

/// Deterministic initialization: weights uniform in
/// [-1/sqrt(fan_in), 1/sqrt(fan_in)] drawn in layout order, biases zero.
inline ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    const auto dims = spec.layer_dims();
    ParamVector theta = ParamVector::Zero(spec.param_count());
    SplitMix64 rng(seed);
    Eigen::Index pos = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
        const Eigen::Index weights = static_cast<Eigen::Index>(dims[l]) * dims[l + 1];
        for (Eigen::Index i = 0; i < weights; ++i) theta[pos++] = rng.uniform(-bound, bound);
        pos += dims[l + 1];  // biases stay zero
    }
    return theta;
}

/// Forward/backward/second-order engine for dense feed-forward classifiers
/// with softmax cross-entropy loss (natural log, log-sum-exp stabilized).
/// All operations are pure functions of their arguments; the weight-decay
/// term is handled one level up (objective.hpp), not here.
class Mlp {
public:
    explicit Mlp(ModelSpec spec) : spec_(std::move(spec)) {
        spec_.validate();
        dims_ = spec_.layer_dims();
        const auto layers = dims_.size() - 1;
        w_off_.resize(layers);
        b_off_.resize(layers);
        Eigen::Index pos = 0;
        for (std::size_t l = 0; l < layers; ++l) {
            w_off_[l] = pos;
            pos += static_cast<Eigen::Index>(dims_[l]) * dims_[l + 1];
            b_off_[l] = pos;
            pos += dims_[l + 1];
        }
        p_ = static_cast<int>(pos);
    }

    const ModelSpec& spec() const { return spec_; }
    int param_count() const { return p_; }

    /// Column-major example matrix plus labels; built once per dataset and
    /// reused across training steps.
    struct Batch {
        Matrix X;  // input_dim x n
        std::vector<int> labels;
        int n() const { return static_cast<int>(labels.size()); }
    };

    Batch make_batch(const Dataset& ds) const {
        require(ds.feature_dim == spec_.input_dim, "Mlp: dataset feature_dim mismatch");
        require(ds.num_classes == spec_.num_classes, "Mlp: dataset num_classes mismatch");
        Batch b;
        b.X.resize(spec_.input_dim, ds.size());
        b.labels.reserve(ds.examples.size());
        for (int i = 0; i < ds.size(); ++i) {
            b.X.col(i) = ds.examples[static_cast<std::size_t>(i)].features;
            b.labels.push_back(ds.examples[static_cast<std::size_t>(i)].label);
        }
        return b;
    }

    // -- weighted data-term operations over a batch ---------------------------

    double weighted_loss(const ParamVector& theta, const Batch& batch,
                         const std::vector<double>& weights) const {
        Forward f = forward(theta, batch);
        return weighted_loss_from(f, batch, weights);
    }

    ParamVector weighted_gradient(const ParamVector& theta, const Batch& batch,
                                  const std::vector<double>& weights,
                                  double* loss_out = nullptr) const {
        Forward f = forward(theta, batch);
        if (loss_out != nullptr) *loss_out = weighted_loss_from(f, batch, weights);
        return backward(theta, batch, weights, f);
    }

    /// Exact Hessian-vector product of the weighted data term via tangent
    /// propagation through the forward and backward passes.
    ParamVector weighted_hvp(const ParamVector& theta, const Batch& batch,
                             const std::vector<double>& weights,
                             const ParamVector& v) const {
        require(v.size() == p_, "Mlp: tangent vector length mismatch");
        Forward f = forward(theta, batch);
        return hvp_from(theta, batch, weights, f, v);
    }

    // -- per-example operations ------------------------------------------------

    double loss(const ParamVector& theta, const Example& ex) const {
        Batch b = single(ex);
        return weighted_loss(theta, b, kUnitWeight);
    }

    ParamVector loss_gradient(const ParamVector& theta, const Example& ex) const {
        Batch b = single(ex);
        return weighted_gradient(theta, b, kUnitWeight);
    }

    ParamVector loss_hvp(const ParamVector& theta, const Example& ex,
                         const ParamVector& v) const {
        Batch b = single(ex);
        return weighted_hvp(theta, b, kUnitWeight, v);
    }

    Vector logits(const ParamVector& theta, const Vector& x) const {
        require(x.size() == spec_.input_dim, "Mlp: feature length mismatch");
        check_theta(theta);
        Vector a = x;
        const auto layers = dims_.size() - 1;
        for (std::size_t l = 0; l + 1 < layers; ++l) {
            a = (weight(theta, l) * a + bias(theta, l)).eval();
            apply_activation(a);
        }
        return weight(theta, layers - 1) * a + bias(theta, layers - 1);
    }

    int predict(const ParamVector& theta, const Vector& x) const {
        Eigen::Index best = 0;
        logits(theta, x).maxCoeff(&best);
        return static_cast<int>(best);
    }

private:
    inline static const std::vector<double> kUnitWeight{1.0};

    using WMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                Eigen::RowMajor>>;
    using WMapMut =
        Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

    WMap weight(const ParamVector& theta, std::size_t l) const {
        return WMap(theta.data() + w_off_[l], dims_[l + 1], dims_[l]);
    }
    Eigen::Map<const Vector> bias(const ParamVector& theta, std::size_t l) const {
        return Eigen::Map<const Vector>(theta.data() + b_off_[l], dims_[l + 1]);
    }
    WMapMut weight_mut(ParamVector& g, std::size_t l) const {
        return WMapMut(g.data() + w_off_[l], dims_[l + 1], dims_[l]);
    }
    Eigen::Map<Vector> bias_mut(ParamVector& g, std::size_t l) const {
        return Eigen::Map<Vector>(g.data() + b_off_[l], dims_[l + 1]);
    }

    void check_theta(const ParamVector& theta) const {
        require(theta.size() == p_, "Mlp: parameter vector length mismatch");
    }

    Batch single(const Example& ex) const {
        require(ex.features.size() == spec_.input_dim, "Mlp: feature length mismatch");
        require(ex.label >= 0 && ex.label < spec_.num_classes, "Mlp: label out of range");
        Batch b;
        b.X = ex.features;
        b.labels = {ex.label};
        return b;
    }

    void apply_activation(Vector& a) const {
        if (spec_.activation == Activation::Tanh) {
            a = a.array().tanh();
        } else {
            a = a.cwiseMax(0.0);
        }
    }

    // phi'(z) and phi''(z) expressed through the stored activation value a.
    Matrix act_prime(const Matrix& a) const {
        if (spec_.activation == Activation::Tanh) {
            return (1.0 - a.array().square()).matrix();
        }
        return (a.array() > 0.0).cast<double>().matrix();
    }
    Matrix act_second(const Matrix& a) const {
        if (spec_.activation == Activation::Tanh) {
            return (-2.0 * a.array() * (1.0 - a.array().square())).matrix();
        }
        return Matrix::Zero(a.rows(), a.cols());
    }

    struct Forward {
        std::vector<Matrix> acts;  // acts[0] = X, acts[l+1] hidden activations
        Matrix logits;             // num_classes x n
        Matrix probs;              // softmax columns
        Eigen::RowVectorXd lse;    // per-column log-sum-exp
    };

    Forward forward(const ParamVector& theta, const Batch& batch) const {
        check_theta(theta);
        const auto layers = dims_.size() - 1;
        Forward f;
        f.acts.resize(layers);
        f.acts[0] = batch.X;
        for (std::size_t l = 0; l + 1 < layers; ++l) {
            Matrix z = weight(theta, l) * f.acts[l];
            z.colwise() += bias(theta, l);
            if (spec_.activation == Activation::Tanh) {
                f.acts[l + 1] = z.array().tanh().matrix();
            } else {
                f.acts[l + 1] = z.cwiseMax(0.0);
            }
        }
        f.logits = weight(theta, layers - 1) * f.acts[layers - 1];
        f.logits.colwise() += bias(theta, layers - 1);

        const Eigen::RowVectorXd maxes = f.logits.colwise().maxCoeff();
        f.lse = maxes +
                (f.logits.rowwise() - maxes).array().exp().colwise().sum().log().matrix();
        f.probs = (f.logits.rowwise() - f.lse).array().exp().matrix();
        return f;
    }

    double weighted_loss_from(const Forward& f, const Batch& batch,
                              const std::vector<double>& weights) const {
        require(static_cast<int>(weights.size()) == batch.n(),
                "Mlp: weight vector length mismatch");
        double total = 0.0;
        for (int j = 0; j < batch.n(); ++j) {
            total += weights[static_cast<std::size_t>(j)] *
                     (f.lse[j] - f.logits(batch.labels[static_cast<std::size_t>(j)], j));
        }
        return total;
    }

    Matrix logit_grad(const Batch& batch, const std::vector<double>& weights,
                      const Forward& f) const {
        Matrix g = f.probs;
        for (int j = 0; j < batch.n(); ++j) {
            g(batch.labels[static_cast<std::size_t>(j)], j) -= 1.0;
            g.col(j) *= weights[static_cast<std::size_t>(j)];
        }
        return g;
    }

    ParamVector backward(const ParamVector& theta, const Batch& batch,
                         const std::vector<double>& weights, const Forward& f) const {
        require(static_cast<int>(weights.size()) == batch.n(),
                "Mlp: weight vector length mismatch");
        const auto layers = dims_.size() - 1;
        ParamVector grad = ParamVector::Zero(p_);

        Matrix cur = logit_grad(batch, weights, f);  // d loss / d logits
        weight_mut(grad, layers - 1) = cur * f.acts[layers - 1].transpose();
        bias_mut(grad, layers - 1) = cur.rowwise().sum();
        if (layers > 1) {
            cur = (weight(theta, layers - 1).transpose() * cur).eval();
            for (std::size_t l = layers - 1; l-- > 0;) {
                const Matrix d = cur.cwiseProduct(act_prime(f.acts[l + 1]));
                weight_mut(grad, l) = d * f.acts[l].transpose();
                bias_mut(grad, l) = d.rowwise().sum();
                if (l > 0) cur = (weight(theta, l).transpose() * d).eval();
            }
        }
        return grad;
    }

    ParamVector hvp_from(const ParamVector& theta, const Batch& batch,
                         const std::vector<double>& weights, const Forward& f,
                         const ParamVector& v) const {
        require(static_cast<int>(weights.size()) == batch.n(),
                "Mlp: weight vector length mismatch");
        const auto layers = dims_.size() - 1;
        const int n = batch.n();

        // Tangents of the forward pass in direction v. r_acts[l] = R{acts[l]};
        // r_pre[l] = R{z_l} is kept for the second-derivative term.
        std::vector<Matrix> r_acts(layers);
        std::vector<Matrix> r_pre(layers);
        r_acts[0] = Matrix::Zero(dims_[0], n);
        for (std::size_t l = 0; l + 1 < layers; ++l) {
            Matrix rz = weight(v, l) * f.acts[l] + weight(theta, l) * r_acts[l];
            rz.colwise() += bias(v, l);
            r_pre[l + 1] = rz;
            r_acts[l + 1] = rz.cwiseProduct(act_prime(f.acts[l + 1]));
        }
        Matrix r_logits =
            weight(v, layers - 1) * f.acts[layers - 1] + weight(theta, layers - 1) * r_acts[layers - 1];
        r_logits.colwise() += bias(v, layers - 1);

        // R{softmax}: p .* ru - p * (p . ru), then per-example weights.
        Matrix g = logit_grad(batch, weights, f);
        Matrix rg(f.probs.rows(), n);
        for (int j = 0; j < n; ++j) {
            const double dot = f.probs.col(j).dot(r_logits.col(j));
            rg.col(j) = weights[static_cast<std::size_t>(j)] *
                        (f.probs.col(j).cwiseProduct(r_logits.col(j)) - f.probs.col(j) * dot);
        }

        ParamVector hv = ParamVector::Zero(p_);
        weight_mut(hv, layers - 1) =
            rg * f.acts[layers - 1].transpose() + g * r_acts[layers - 1].transpose();
        bias_mut(hv, layers - 1) = rg.rowwise().sum();

        if (layers > 1) {
            Matrix cur = (weight(theta, layers - 1).transpose() * g).eval();
            Matrix r_cur = (weight(v, layers - 1).transpose() * g +
                            weight(theta, layers - 1).transpose() * rg)
                               .eval();
            for (std::size_t l = layers - 1; l-- > 0;) {
                const Matrix prime = act_prime(f.acts[l + 1]);
                const Matrix d = cur.cwiseProduct(prime);
                const Matrix rd =
                    r_cur.cwiseProduct(prime) +
                    cur.cwiseProduct(act_second(f.acts[l + 1])).cwiseProduct(r_pre[l + 1]);
                weight_mut(hv, l) = rd * f.acts[l].transpose() + d * r_acts[l].transpose();
                bias_mut(hv, l) = rd.rowwise().sum();
                if (l > 0) {
                    r_cur = (weight(v, l).transpose() * d + weight(theta, l).transpose() * rd).eval();
                    cur = (weight(theta, l).transpose() * d).eval();
                }
            }
        }
        return hv;
    }

    ModelSpec spec_;
    std::vector<int> dims_;
    std::vector<Eigen::Index> w_off_;
    std::vector<Eigen::Index> b_off_;
    int p_ = 0;
};

}  // namespace iftk
