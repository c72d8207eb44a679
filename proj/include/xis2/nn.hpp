#ifndef XIS2_NN_HPP
#define XIS2_NN_HPP

// Named parameters and the layer vocabulary shared by the generator and
// discriminator networks.

#include <map>
#include <string>
#include <vector>

#include "xis2/tensor.hpp"

namespace xis2 {

template <class S>
struct ParameterT {
    std::string name;
    TensorT<S> tensor;
};

// Per-network parameter registry. Names are unique; serialization walks them
// in sorted-name order.
template <class S>
class ParamStoreT {
public:
    TensorT<S> add(const std::string& name, TensorT<S> t) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        t.set_requires_grad(true);
        index_[name] = params_.size();
        params_.push_back({name, t});
        return t;
    }

    size_t size() const { return params_.size(); }
    const ParameterT<S>& at(size_t i) const { return params_[i]; }

    TensorT<S> find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("no such parameter: " + name);
        return params_[it->second].tensor;
    }
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    std::vector<ParameterT<S>>& params() { return params_; }
    const std::vector<ParameterT<S>>& params() const { return params_; }

    std::vector<const ParameterT<S>*> sorted() const {
        std::map<std::string, const ParameterT<S>*> m;
        for (const auto& p : params_) m[p.name] = &p;
        std::vector<const ParameterT<S>*> out;
        out.reserve(m.size());
        for (auto& [k, v] : m) out.push_back(v);
        return out;
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    int64_t total_elements() const {
        int64_t n = 0;
        for (const auto& p : params_) n += p.tensor.numel();
        return n;
    }

private:
    std::vector<ParameterT<S>> params_;
    std::unordered_map<std::string, size_t> index_;
};

namespace init {

template <class S>
TensorT<S> glorot(const Shape& shape, int64_t fan_in, int64_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    TensorT<S> t = TensorT<S>::uninit(shape);
    for (auto& v : t.data()) v = static_cast<S>(rng.uniform(-limit, limit));
    return t;
}

}  // namespace init

template <class S>
struct LinearT {
    TensorT<S> w;  // (in, out)
    TensorT<S> b;  // (out)

    LinearT() = default;
    LinearT(ParamStoreT<S>& store, const std::string& prefix, int64_t in, int64_t out, Rng& rng) {
        w = store.add(prefix + ".w", init::glorot<S>({in, out}, in, out, rng));
        b = store.add(prefix + ".b", TensorT<S>::zeros({out}));
    }

    TensorT<S> forward(const TensorT<S>& x) const { return add_rowwise(matmul(x, w), b); }
};

template <class S>
struct EmbeddingT {
    TensorT<S> table;  // (vocab, dim)

    EmbeddingT() = default;
    EmbeddingT(ParamStoreT<S>& store, const std::string& name, int64_t vocab, int64_t dim,
               Rng& rng) {
        table = store.add(name, TensorT<S>::randn({vocab, dim}, rng,
                                                  static_cast<S>(1.0 / std::sqrt(double(dim)))));
    }

    TensorT<S> forward(const std::vector<int64_t>& ids) const { return gather_rows(table, ids); }
};

template <class S>
struct LayerNormLayerT {
    TensorT<S> gamma, beta;
    S eps = S(1e-5);

    LayerNormLayerT() = default;
    LayerNormLayerT(ParamStoreT<S>& store, const std::string& prefix, int64_t d) {
        gamma = store.add(prefix + ".gamma", TensorT<S>::filled({d}, S(1)));
        beta = store.add(prefix + ".beta", TensorT<S>::zeros({d}));
    }

    TensorT<S> forward(const TensorT<S>& x) const { return layer_norm(x, gamma, beta, eps); }
};

// x in channels-first layout (C_in, T)
template <class S>
struct Conv1dLayerT {
    TensorT<S> w;  // (C_out, C_in, K)
    TensorT<S> b;  // (C_out)
    int64_t stride = 1, padding = 0;

    Conv1dLayerT() = default;
    Conv1dLayerT(ParamStoreT<S>& store, const std::string& prefix, int64_t cin, int64_t cout,
                 int64_t k, Rng& rng, int64_t stride_ = 1, int64_t padding_ = 0)
        : stride(stride_), padding(padding_) {
        w = store.add(prefix + ".w", init::glorot<S>({cout, cin, k}, cin * k, cout * k, rng));
        b = store.add(prefix + ".b", TensorT<S>::zeros({cout}));
    }

    TensorT<S> forward(const TensorT<S>& x) const {
        return add_colwise(conv1d(x, w, stride, padding), b);
    }
};

// x in (C_in, F, T)
template <class S>
struct Conv2dLayerT {
    TensorT<S> w;  // (C_out, C_in, Kf, Kt)
    TensorT<S> b;  // (C_out)
    std::pair<int64_t, int64_t> stride{1, 1}, dilation{1, 1}, padding{0, 0};

    Conv2dLayerT() = default;
    Conv2dLayerT(ParamStoreT<S>& store, const std::string& prefix, int64_t cin, int64_t cout,
                 std::pair<int64_t, int64_t> k, Rng& rng, std::pair<int64_t, int64_t> stride_,
                 std::pair<int64_t, int64_t> dilation_, std::pair<int64_t, int64_t> padding_)
        : stride(stride_), dilation(dilation_), padding(padding_) {
        w = store.add(prefix + ".w", init::glorot<S>({cout, cin, k.first, k.second},
                                                     cin * k.first * k.second,
                                                     cout * k.first * k.second, rng));
        b = store.add(prefix + ".b", TensorT<S>::zeros({cout}));
    }

    TensorT<S> forward(const TensorT<S>& x) const {
        return add_chanwise(conv2d(x, w, stride, dilation, padding), b);
    }
};

// Scaled dot-product attention over heads split from width d. Weights are
// (d,d) projections without biases. If attn_maps is non-null the per-head
// attention probability matrices (T,T) are appended to it.
template <class S>
TensorT<S> multi_head_self_attention(const TensorT<S>& x, int64_t heads, const TensorT<S>& wq,
                                     const TensorT<S>& wk, const TensorT<S>& wv,
                                     const TensorT<S>& wo,
                                     std::vector<TensorT<S>>* attn_maps = nullptr) {
    check_shape(x.rank() == 2, "mhsa: expected rank-2 input, got " + shape_str(x.shape()));
    const int64_t d = x.dim(1);
    if (heads < 1 || d % heads != 0)
        throw ConfigError("mhsa: width " + std::to_string(d) + " not divisible by " +
                          std::to_string(heads) + " heads");
    const int64_t dh = d / heads;
    TensorT<S> q = matmul(x, wq);
    TensorT<S> k = matmul(x, wk);
    TensorT<S> v = matmul(x, wv);
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<TensorT<S>> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int64_t h = 0; h < heads; ++h) {
        TensorT<S> qh = slice_cols(q, h * dh, (h + 1) * dh);
        TensorT<S> kh = slice_cols(k, h * dh, (h + 1) * dh);
        TensorT<S> vh = slice_cols(v, h * dh, (h + 1) * dh);
        TensorT<S> scores = mul(matmul(qh, transpose(kh)), scale);
        TensorT<S> attn = softmax_rows(scores);
        if (attn_maps) attn_maps->push_back(attn);
        head_outs.push_back(matmul(attn, vh));
    }
    TensorT<S> cat = heads == 1 ? head_outs[0] : concat_cols(head_outs);
    return matmul(cat, wo);
}

// fixed sinusoidal positions, untracked
template <class S>
TensorT<S> positional_encoding(int64_t t, int64_t d) {
    TensorT<S> pe = TensorT<S>::uninit({t, d});
    S* p = pe.data().data();
    for (int64_t pos = 0; pos < t; ++pos)
        for (int64_t i = 0; i < d; ++i) {
            const double angle =
                static_cast<double>(pos) / std::pow(10000.0, double(2 * (i / 2)) / double(d));
            p[pos * d + i] = static_cast<S>((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
        }
    return pe;
}

}  // namespace xis2

#endif
