#ifndef XIS2_CHECKPOINT_HPP
#define XIS2_CHECKPOINT_HPP

// Binary checkpoint container: little-endian, header {magic, format_version
// u32, param_count u32}, then per parameter {name_len u32, name utf-8,
// rank u32, dims u32[], data f32[]} in sorted-name order. The generator uses
// magic "XIS2", the discriminator "XID2", optimizer state "XOPT".

#include <cstdint>
#include <string>
#include <vector>

#include "xis2/nn.hpp"
#include "xis2/optim.hpp"

namespace xis2 {

inline constexpr char kGeneratorMagic[5] = "XIS2";
inline constexpr char kDiscriminatorMagic[5] = "XID2";
inline constexpr char kOptimizerMagic[5] = "XOPT";
inline constexpr uint32_t kCheckpointVersion = 1;

struct NamedTensorData {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

void write_records(const std::string& path, const char* magic,
                   const std::vector<NamedTensorData>& records);
std::vector<NamedTensorData> read_records(const std::string& path, const char* magic);

template <class S>
void save_params(const std::string& path, const ParamStoreT<S>& store, const char* magic) {
    std::vector<NamedTensorData> records;
    for (const ParameterT<S>* p : store.sorted()) {
        NamedTensorData r;
        r.name = p->name;
        r.shape = p->tensor.shape();
        r.data.reserve(p->tensor.data().size());
        for (S v : p->tensor.data()) r.data.push_back(static_cast<float>(v));
        records.push_back(std::move(r));
    }
    write_records(path, magic, records);
}

// Strict load: every record must match a parameter of the same name and
// shape, and every parameter must be present.
template <class S>
void load_params(const std::string& path, ParamStoreT<S>& store, const char* magic) {
    std::vector<NamedTensorData> records = read_records(path, magic);
    if (records.size() != store.size())
        throw IoError("checkpoint " + path + ": has " + std::to_string(records.size()) +
                      " parameters, model expects " + std::to_string(store.size()));
    for (const auto& r : records) {
        if (!store.contains(r.name))
            throw IoError("checkpoint " + path + ": unknown parameter " + r.name);
        TensorT<S> t = store.find(r.name);
        if (t.shape() != r.shape)
            throw IoError("checkpoint " + path + ": shape mismatch for " + r.name + ": " +
                          shape_str(r.shape) + " vs model " + shape_str(t.shape()));
        for (size_t i = 0; i < r.data.size(); ++i) t.data()[i] = static_cast<S>(r.data[i]);
    }
}

// Optimizer state rides in the same container with ".m"/".v" suffixes plus a
// scalar "__step__" record.
template <class S>
void save_adam(const std::string& path, const AdamT<S>& opt, const ParamStoreT<S>& store) {
    std::vector<NamedTensorData> records;
    NamedTensorData st;
    st.name = "__step__";
    st.shape = {1};
    st.data = {static_cast<float>(opt.step_count())};
    records.push_back(std::move(st));
    for (size_t i = 0; i < store.size(); ++i) {
        const auto& p = store.at(i);
        NamedTensorData m, v;
        m.name = p.name + ".m";
        v.name = p.name + ".v";
        m.shape = v.shape = p.tensor.shape();
        for (S x : opt.slots()[i].m) m.data.push_back(static_cast<float>(x));
        for (S x : opt.slots()[i].v) v.data.push_back(static_cast<float>(x));
        records.push_back(std::move(m));
        records.push_back(std::move(v));
    }
    write_records(path, kOptimizerMagic, records);
}

template <class S>
void load_adam(const std::string& path, AdamT<S>& opt, const ParamStoreT<S>& store) {
    std::vector<NamedTensorData> records = read_records(path, kOptimizerMagic);
    std::unordered_map<std::string, const NamedTensorData*> by_name;
    for (const auto& r : records) by_name[r.name] = &r;
    auto it = by_name.find("__step__");
    if (it == by_name.end()) throw IoError("optimizer state " + path + ": missing __step__");
    opt.set_step(static_cast<int64_t>(it->second->data.at(0)));
    if (records.size() != 1 + 2 * store.size())
        throw IoError("optimizer state " + path + ": record count mismatch");
    for (size_t i = 0; i < store.size(); ++i) {
        const auto& p = store.at(i);
        for (const char* suffix : {".m", ".v"}) {
            auto jt = by_name.find(p.name + suffix);
            if (jt == by_name.end())
                throw IoError("optimizer state " + path + ": missing " + p.name + suffix);
            const auto& r = *jt->second;
            if (r.shape != p.tensor.shape())
                throw IoError("optimizer state " + path + ": shape mismatch for " + r.name);
            auto& dst = suffix[1] == 'm' ? opt.slots()[i].m : opt.slots()[i].v;
            dst.resize(r.data.size());
            for (size_t k = 0; k < r.data.size(); ++k) dst[k] = static_cast<S>(r.data[k]);
        }
    }
}

}  // namespace xis2

#endif
