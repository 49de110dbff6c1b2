#include "lrtabl/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <sstream>

#include "lrtabl/csv.hpp"

namespace lrtabl {

namespace {

constexpr std::string_view kMagic = "LRTABL-CHECKPOINT";

class ByteWriter {
public:
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u64(s.size());
        out_ += s;
    }
    void floats(std::span<const float> v) {
        u64(v.size());
        for (float x : v) f32(x);
    }
    const std::string& bytes() const { return out_; }

private:
    std::string out_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view in) : in_(in) {}

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_++])) << (8 * i);
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in_[pos_++])) << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const auto n = u64();
        need(n);
        std::string s(in_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    void floats_into(std::span<float> dst) {
        const auto n = u64();
        if (n != dst.size()) throw CheckpointError("checkpoint tensor size mismatch");
        for (auto& x : dst) x = f32();
    }
    std::vector<float> floats() {
        const auto n = u64();
        need(n * 4);
        std::vector<float> v(n);
        for (auto& x : v) x = f32();
        return v;
    }
    bool done() const { return pos_ == in_.size(); }

private:
    void need(std::uint64_t n) const {
        if (n > in_.size() - pos_) throw CheckpointError("checkpoint payload truncated");
    }
    std::string_view in_;
    std::size_t pos_ = 0;
};

void write_spec(ByteWriter& w, const NetworkSpec& spec) {
    w.u32(static_cast<std::uint32_t>(spec.structure));
    w.u32(static_cast<std::uint32_t>(spec.variant));
    w.u64(spec.rank);
    w.u64(spec.layers.size());
    for (const auto& l : spec.layers) {
        w.u32(static_cast<std::uint32_t>(l.kind));
        w.u64(l.d_in);
        w.u64(l.t_in);
        w.u64(l.d_out);
        w.u64(l.t_out);
        w.u64(l.rank);
        w.u32(static_cast<std::uint32_t>(l.activation));
        w.u32(l.enforce_diag ? 1 : 0);
    }
}

NetworkSpec read_spec(ByteReader& r) {
    NetworkSpec spec;
    const auto structure = r.u32();
    const auto variant = r.u32();
    if (structure > 3 || variant > 1) throw CheckpointError("checkpoint spec is corrupt");
    spec.structure = static_cast<StructureId>(structure);
    spec.variant = static_cast<Variant>(variant);
    spec.rank = r.u64();
    const auto n = r.u64();
    if (n > 1024) throw CheckpointError("checkpoint spec is corrupt");
    for (std::uint64_t i = 0; i < n; ++i) {
        LayerSpec l;
        const auto kind = r.u32();
        if (kind > 3) throw CheckpointError("checkpoint spec is corrupt");
        l.kind = static_cast<LayerKind>(kind);
        l.d_in = r.u64();
        l.t_in = r.u64();
        l.d_out = r.u64();
        l.t_out = r.u64();
        l.rank = r.u64();
        const auto act = r.u32();
        if (act > 1) throw CheckpointError("checkpoint spec is corrupt");
        l.activation = static_cast<Activation>(act);
        l.enforce_diag = r.u32() != 0;
        spec.layers.push_back(l);
    }
    try {
        spec.validate();
    } catch (const std::exception& e) {
        throw CheckpointError(std::string("checkpoint spec is invalid: ") + e.what());
    }
    return spec;
}

void write_params(ByteWriter& w, const Network<float>& net) {
    for (std::size_t i = 0; i < net.params.size(); ++i) {
        for_each_tensor(net.spec.layers[i], net.params[i],
                        [&](std::string_view, std::span<const float> v) { w.floats(v); });
    }
}

Network<float> read_params(ByteReader& r, const NetworkSpec& spec) {
    Network<float> net;
    net.spec = spec;
    for (const auto& l : spec.layers) {
        auto p = zero_params<float>(l);
        for_each_tensor(l, p, [&](std::string_view, std::span<float> v) { r.floats_into(v); });
        net.params.push_back(std::move(p));
    }
    return net;
}

std::string hex32(std::uint32_t v) {
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x", v);
    return buf;
}

}  // namespace

std::uint32_t crc32_of(std::string_view bytes) {
    return static_cast<std::uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

std::string serialize_checkpoint(const TrainState& st) {
    ByteWriter w;
    write_spec(w, st.net.spec);
    write_params(w, st.net);
    write_params(w, st.best);
    w.u64(st.opt.step);
    w.u64(st.opt.m.size());
    for (std::size_t i = 0; i < st.opt.m.size(); ++i) {
        w.floats(st.opt.m[i]);
        w.floats(st.opt.v[i]);
    }
    w.u64(static_cast<std::uint64_t>(st.epoch));
    w.f64(st.best_f1);
    w.u64(static_cast<std::uint64_t>(st.best_epoch));
    w.u64(static_cast<std::uint64_t>(st.stale_epochs));
    w.u32(st.stopped ? 1 : 0);
    w.str(st.rng.state());
    w.u64(st.history.size());
    for (const auto& rec : st.history) {
        w.u64(static_cast<std::uint64_t>(rec.epoch));
        w.f64(rec.train_loss);
        for (const auto& row : rec.val.confusion)
            for (auto c : row) w.u64(c);
    }

    const std::string spec_text = st.net.spec.to_string();
    std::ostringstream header;
    header << kMagic << '\n'
           << "version " << kCheckpointVersion << '\n'
           << "spec " << spec_text << '\n'
           << "spec_digest " << hex32(crc32_of(spec_text)) << '\n'
           << "payload_bytes " << w.bytes().size() << '\n'
           << "payload_crc32 " << hex32(crc32_of(w.bytes())) << '\n'
           << '\n';
    return header.str() + w.bytes();
}

TrainState deserialize_checkpoint(const std::string& bytes) {
    std::size_t pos = 0;
    auto next_line = [&]() -> std::string {
        const auto nl = bytes.find('\n', pos);
        if (nl == std::string::npos) throw CheckpointError("checkpoint header truncated");
        std::string line = bytes.substr(pos, nl - pos);
        pos = nl + 1;
        return line;
    };
    auto field = [&](const std::string& key) {
        const std::string line = next_line();
        if (line.rfind(key + " ", 0) != 0) throw CheckpointError("checkpoint header missing '" + key + "'");
        return line.substr(key.size() + 1);
    };

    if (next_line() != kMagic) throw CheckpointError("not a checkpoint file (bad magic)");
    const std::string version = field("version");
    if (version != std::to_string(kCheckpointVersion)) {
        throw CheckpointError("checkpoint version mismatch: file has " + version + ", expected " +
                              std::to_string(kCheckpointVersion));
    }
    const std::string spec_text = field("spec");
    const std::string digest = field("spec_digest");
    const std::string size_text = field("payload_bytes");
    const std::string crc_text = field("payload_crc32");
    if (!next_line().empty()) throw CheckpointError("checkpoint header not terminated");

    const std::string_view payload = std::string_view(bytes).substr(pos);
    if (std::to_string(payload.size()) != size_text) throw CheckpointError("checkpoint payload size mismatch");
    if (hex32(crc32_of(payload)) != crc_text) throw CheckpointError("checkpoint checksum mismatch");
    if (hex32(crc32_of(spec_text)) != digest) throw CheckpointError("checkpoint spec digest mismatch");

    ByteReader r(payload);
    TrainState st;
    const auto spec = read_spec(r);
    if (spec.to_string() != spec_text) throw CheckpointError("checkpoint spec does not match its header");
    st.net = read_params(r, spec);
    st.best = read_params(r, spec);
    st.opt.step = r.u64();
    const auto n_moments = r.u64();
    if (n_moments != make_optimizer_state(st.net).m.size()) throw CheckpointError("checkpoint optimizer state mismatch");
    for (std::uint64_t i = 0; i < n_moments; ++i) {
        st.opt.m.push_back(r.floats());
        st.opt.v.push_back(r.floats());
    }
    st.epoch = static_cast<int>(r.u64());
    st.best_f1 = r.f64();
    st.best_epoch = static_cast<int>(r.u64());
    st.stale_epochs = static_cast<int>(r.u64());
    st.stopped = r.u32() != 0;
    try {
        st.rng.set_state(r.str());
    } catch (const std::exception&) {
        throw CheckpointError("checkpoint RNG state is corrupt");
    }
    const auto n_hist = r.u64();
    for (std::uint64_t i = 0; i < n_hist; ++i) {
        EpochRecord rec;
        rec.epoch = static_cast<int>(r.u64());
        rec.train_loss = r.f64();
        for (auto& row : rec.val.confusion)
            for (auto& c : row) c = r.u64();
        rec.val.recompute();
        st.history.push_back(rec);
    }
    if (!r.done()) throw CheckpointError("checkpoint payload has trailing bytes");
    return st;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
    atomic_write_file(path, serialize_checkpoint(state));
}

TrainState load_checkpoint(const std::filesystem::path& path) {
    std::string bytes;
    try {
        bytes = read_file(path);
    } catch (const std::exception& e) {
        throw CheckpointError(e.what());
    }
    return deserialize_checkpoint(bytes);
}

}  // namespace lrtabl
