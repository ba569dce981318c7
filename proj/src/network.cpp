#include "vffc/network.hpp"

#include "vffc/format.hpp"

#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "vffc/errors.hpp"
#include "vffc/rng.hpp"

namespace vffc {

namespace {

std::string trim(std::string_view s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    std::size_t e = s.find_last_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_num(std::string_view raw, const char* what) {
    std::string v = trim(raw);
    T out{};
    if constexpr (std::is_floating_point_v<T>) {
        try {
            std::size_t used = 0;
            out = static_cast<T>(std::stod(v, &used));
            if (used != v.size()) throw std::invalid_argument("");
        } catch (...) {
            throw DataError(std::string("config: bad number for ") + what + ": '" + v + "'");
        }
    } else {
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc{} || p != v.data() + v.size())
            throw DataError(std::string("config: bad integer for ") + what + ": '" + v + "'");
    }
    return out;
}

template <typename T>
std::vector<T> parse_list(std::string_view raw, const char* what) {
    std::vector<T> out;
    std::string item;
    std::stringstream ss{std::string(raw)};
    while (std::getline(ss, item, ',')) out.push_back(parse_num<T>(item, what));
    if (out.empty()) throw DataError(std::string("config: empty list for ") + what);
    return out;
}

template <typename T>
std::string join_list(const std::vector<T>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    return os.str();
}

Rng init_stream(std::uint64_t seed, std::string_view name) {
    return Rng(seed ^ fnv1a(name));
}

ConvResBlock make_conv_res_block(std::int64_t c, double drop_path_p, std::uint64_t seed,
                                 const std::string& name) {
    ConvResBlock b;
    Rng ra = init_stream(seed, name + ".conv_a");
    Rng rb = init_stream(seed, name + ".conv_b");
    b.a = make_conv3d(c, c, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, false, ra);
    b.b = make_conv3d(c, c, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, false, rb);
    b.bn = make_batch_norm(c);
    b.drop_path_p = drop_path_p;
    return b;
}

Tensor conv_res_forward(ConvResBlock& b, const Tensor& x, bool training, Rng& rng) {
    Tensor z = relu(batch_norm(conv3d(conv3d(x, b.a), b.b), b.bn, training));
    return add(x, drop_path(z, b.drop_path_p, training, rng));
}

Tensor down_forward(ConvBnLayer& l, const Tensor& x, bool training) {
    return relu(batch_norm(conv3d(x, l.conv), l.bn, training));
}

// Decoder step: upsample, concatenate the depth-collapsed skip, fuse.
Tensor decode_step(ConvBnLayer& l, const Tensor& x, const Tensor& skip2d, bool training) {
    Tensor up = bilinear_up2(x);
    const Tensor parts[] = {up, skip2d};
    Tensor cat = concat(parts, 3);
    return relu(batch_norm(conv2d(cat, l.conv), l.bn, training));
}

void validate_config(const NetworkConfig& cfg) {
    if (cfg.widths.size() != 4 || cfg.blocks.size() != 4)
        throw DataError("network config: widths and blocks must have 4 entries");
    for (auto w : cfg.widths)
        if (w < 2) throw DataError("network config: widths must be >= 2");
    for (auto b : cfg.blocks)
        if (b < 1) throw DataError("network config: blocks must be >= 1");
    if (cfg.depth < 8 || cfg.depth % 8 != 0)
        throw DataError("network config: depth must be a positive multiple of 8");
    if (cfg.bottleneck != "conv" && cfg.bottleneck != "none")
        ffc_kind_from_name(cfg.bottleneck);
    if (cfg.global_ratio <= 0.0 || cfg.global_ratio >= 1.0)
        throw DataError("network config: global_ratio must be in (0,1)");
    if (cfg.drop_path < 0.0 || cfg.drop_path >= 1.0)
        throw DataError("network config: drop_path must be in [0,1)");
    if (cfg.channel_dropout_p < 0.0 || cfg.channel_dropout_p >= 1.0)
        throw DataError("network config: channel_dropout_p must be in [0,1)");
}

}  // namespace

std::string network_config_to_text(const NetworkConfig& cfg) {
    std::ostringstream os;
    os << "bottleneck = " << cfg.bottleneck << "\n";
    os << "widths = " << join_list(cfg.widths) << "\n";
    os << "blocks = " << join_list(cfg.blocks) << "\n";
    os << "global_ratio = " << format_shortest(cfg.global_ratio) << "\n";
    os << "drop_path = " << format_shortest(cfg.drop_path) << "\n";
    os << "channel_dropout_p = " << format_shortest(cfg.channel_dropout_p) << "\n";
    os << "depth = " << cfg.depth << "\n";
    os << "init_seed = " << cfg.init_seed << "\n";
    return os.str();
}

bool apply_network_config_kv(NetworkConfig& cfg, std::string_view key, std::string_view value) {
    std::string k = trim(key);
    if (k == "bottleneck") {
        cfg.bottleneck = trim(value);
    } else if (k == "widths") {
        cfg.widths = parse_list<std::int64_t>(value, "widths");
    } else if (k == "blocks") {
        cfg.blocks = parse_list<int>(value, "blocks");
    } else if (k == "global_ratio") {
        cfg.global_ratio = parse_num<double>(value, "global_ratio");
    } else if (k == "drop_path") {
        cfg.drop_path = parse_num<double>(value, "drop_path");
    } else if (k == "channel_dropout_p") {
        cfg.channel_dropout_p = parse_num<double>(value, "channel_dropout_p");
    } else if (k == "depth") {
        cfg.depth = parse_num<std::int64_t>(value, "depth");
    } else if (k == "init_seed") {
        cfg.init_seed = parse_num<std::uint64_t>(value, "init_seed");
    } else {
        return false;
    }
    return true;
}

NetworkConfig network_config_from_text(const std::string& text) {
    NetworkConfig cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos) throw DataError("config: expected 'key = value': " + t);
        if (!apply_network_config_kv(cfg, t.substr(0, eq), t.substr(eq + 1)))
            throw DataError("config: unknown network key in '" + t + "'");
    }
    return cfg;
}

Network make_network(const NetworkConfig& cfg) {
    validate_config(cfg);
    Network net;
    net.cfg = cfg;
    const auto& w = cfg.widths;
    const std::uint64_t seed = cfg.init_seed;

    Rng r_stem = init_stream(seed, "stem.conv");
    net.stem = make_conv3d(1, w[0], {3, 3, 3}, {2, 4, 4}, {1, 1, 1}, false, r_stem);
    net.stem_bn = make_batch_norm(w[0]);

    const std::array<std::array<std::int64_t, 3>, 3> down_strides{
        {{2, 2, 2}, {2, 2, 2}, {1, 2, 2}}};
    for (int s = 0; s < 3; ++s) {
        for (int i = 0; i < cfg.blocks[s]; ++i) {
            std::string name = "enc" + std::to_string(s) + ".block" + std::to_string(i);
            net.enc[s].push_back(make_conv_res_block(w[s], cfg.drop_path, seed, name));
        }
        std::string dname = "down" + std::to_string(s + 1) + ".conv";
        Rng rd = init_stream(seed, dname);
        net.down[s].conv =
            make_conv3d(w[s], w[s + 1], {3, 3, 3}, down_strides[s], {1, 1, 1}, false, rd);
        net.down[s].bn = make_batch_norm(w[s + 1]);
    }

    const std::int64_t bott_depth = cfg.depth / 8;
    for (int i = 0; cfg.bottleneck != "none" && i < cfg.blocks[3]; ++i) {
        std::string name = "bottleneck.block" + std::to_string(i);
        if (cfg.bottleneck == "conv") {
            net.bott_conv.push_back(make_conv_res_block(w[3], cfg.drop_path, seed, name));
        } else {
            Rng rb = init_stream(seed, name);
            FfcOptions opt;
            opt.global_ratio = cfg.global_ratio;
            net.bott_ffc.push_back(make_ffc_res_block(ffc_kind_from_name(cfg.bottleneck), w[3],
                                                      bott_depth, cfg.drop_path, rb, opt));
        }
    }

    const std::int64_t dec_in[3] = {w[3] + w[2], w[2] + w[1], w[1] + w[0]};
    const std::int64_t dec_out[3] = {w[2], w[1], w[0]};
    for (int i = 0; i < 3; ++i) {
        std::string name = "dec" + std::to_string(i) + ".conv";
        Rng rd = init_stream(seed, name);
        net.dec[i].conv =
            make_conv3d(dec_in[i], dec_out[i], {1, 3, 3}, {1, 1, 1}, {0, 1, 1}, false, rd);
        net.dec[i].bn = make_batch_norm(dec_out[i]);
    }
    Rng rr = init_stream(seed, "refine.conv");
    net.refine.conv = make_conv3d(w[0], w[0], {1, 3, 3}, {1, 1, 1}, {0, 1, 1}, false, rr);
    net.refine.bn = make_batch_norm(w[0]);
    Rng rh = init_stream(seed, "head.conv");
    net.head = make_conv3d(w[0], 1, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, true, rh);
    return net;
}

Tensor network_forward(Network& net, const Tensor& x, bool training, Rng& rng,
                       ForwardProbe* probe) {
    if (x.rank() != 5)
        throw std::invalid_argument("network_forward: expected rank-5 input, got " +
                                    shape_str(x.shape()));
    const Shape& s = x.shape();
    if (s[4] != 1) throw std::invalid_argument("network_forward: expected 1 input channel");
    if (s[2] % 32 != 0 || s[3] % 32 != 0)
        throw std::invalid_argument("network_forward: H and W must be multiples of 32");
    if (s[1] % 8 != 0 || s[1] < 8)
        throw std::invalid_argument("network_forward: depth must be a positive multiple of 8");
    if (net.cfg.bottleneck == "stffc" && s[1] != net.cfg.depth)
        throw std::invalid_argument("network_forward: stffc network is fixed to depth " +
                                    std::to_string(net.cfg.depth));

    Tensor t = relu(batch_norm(conv3d(x, net.stem), net.stem_bn, training));
    std::array<Tensor, 3> skips;
    for (int st = 0; st < 3; ++st) {
        for (auto& b : net.enc[st]) t = conv_res_forward(b, t, training, rng);
        skips[st] = t;
        if (probe) probe->stage[st] = t;
        t = down_forward(net.down[st], t, training);
    }
    if (probe) probe->last_encoder = skips[2];

    t = channel_dropout(t, net.cfg.channel_dropout_p, training, rng);
    for (auto& b : net.bott_conv) t = conv_res_forward(b, t, training, rng);
    for (auto& b : net.bott_ffc) t = ffc_residual_block(t, b, training, rng);
    if (probe) probe->stage[3] = t;

    Tensor m = depth_mean(t);
    m = decode_step(net.dec[0], m, depth_mean(skips[2]), training);
    m = decode_step(net.dec[1], m, depth_mean(skips[1]), training);
    m = decode_step(net.dec[2], m, depth_mean(skips[0]), training);
    m = relu(batch_norm(conv2d(m, net.refine.conv), net.refine.bn, training));
    return conv2d(m, net.head);  // logits, (N, H/4, W/4, 1)
}

namespace {

void add_conv(ParamStore& ps, const std::string& name, Conv3d& c) {
    ps.params.push_back({name + ".weight", c.weight});
    if (c.bias.defined()) ps.params.push_back({name + ".bias", c.bias});
}

void add_bn(ParamStore& ps, const std::string& name, BatchNorm& bn) {
    ps.params.push_back({name + ".gamma", bn.gamma});
    ps.params.push_back({name + ".beta", bn.beta});
    ps.buffers.push_back({name + ".running_mean", bn.running_mean});
    ps.buffers.push_back({name + ".running_var", bn.running_var});
}

void add_conv_res(ParamStore& ps, const std::string& name, ConvResBlock& b) {
    add_conv(ps, name + ".conv_a", b.a);
    add_conv(ps, name + ".conv_b", b.b);
    add_bn(ps, name + ".bn", b.bn);
}

void add_ffc(ParamStore& ps, const std::string& name, FfcUnit& u) {
    add_conv(ps, name + ".ll_a", u.ll_a);
    add_conv(ps, name + ".ll_b", u.ll_b);
    add_conv(ps, name + ".lg", u.lg);
    add_conv(ps, name + ".gl", u.gl);
    add_conv(ps, name + ".st.pw", u.st.pw);
    add_bn(ps, name + ".st.bn", u.st.bn);
    add_bn(ps, name + ".bn_l", u.bn_l);
    add_bn(ps, name + ".bn_g", u.bn_g);
}

}  // namespace

ParamStore collect_params(Network& net) {
    ParamStore ps;
    add_conv(ps, "stem.conv", net.stem);
    add_bn(ps, "stem.bn", net.stem_bn);
    for (int s = 0; s < 3; ++s) {
        for (std::size_t i = 0; i < net.enc[s].size(); ++i)
            add_conv_res(ps, "enc" + std::to_string(s) + ".block" + std::to_string(i),
                         net.enc[s][i]);
        add_conv(ps, "down" + std::to_string(s + 1) + ".conv", net.down[s].conv);
        add_bn(ps, "down" + std::to_string(s + 1) + ".bn", net.down[s].bn);
    }
    for (std::size_t i = 0; i < net.bott_conv.size(); ++i)
        add_conv_res(ps, "bottleneck.block" + std::to_string(i), net.bott_conv[i]);
    for (std::size_t i = 0; i < net.bott_ffc.size(); ++i)
        add_ffc(ps, "bottleneck.block" + std::to_string(i), net.bott_ffc[i].unit);
    for (int i = 0; i < 3; ++i) {
        add_conv(ps, "dec" + std::to_string(i) + ".conv", net.dec[i].conv);
        add_bn(ps, "dec" + std::to_string(i) + ".bn", net.dec[i].bn);
    }
    add_conv(ps, "refine.conv", net.refine.conv);
    add_bn(ps, "refine.bn", net.refine.bn);
    add_conv(ps, "head.conv", net.head);
    return ps;
}

std::int64_t param_count(const ParamStore& store) {
    std::int64_t n = 0;
    for (const auto& p : store.params) n += p.tensor.size();
    return n;
}

namespace {

constexpr char kCkptMagic[8] = {'V', 'F', 'F', 'C', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw DataError("checkpoint: truncated");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw DataError("checkpoint: truncated");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

void put_str(std::ostream& os, const std::string& s) {
    put_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::istream& is) {
    std::uint64_t n = get_u64(is);
    if (n > (1ull << 32)) throw DataError("checkpoint: implausible string length");
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw DataError("checkpoint: truncated string");
    return s;
}

void put_named_tensors(std::ostream& os, const std::vector<ParamEntry>& entries) {
    put_u64(os, entries.size());
    for (const auto& e : entries) {
        put_str(os, e.name);
        write_tensor(os, e.tensor);
    }
}

void load_named_tensors(std::istream& is, std::vector<ParamEntry>& entries, const char* what) {
    std::uint64_t n = get_u64(is);
    if (n != entries.size())
        throw DataError(std::string("checkpoint: ") + what + " count mismatch");
    for (auto& e : entries) {
        std::string name = get_str(is);
        if (name != e.name)
            throw DataError("checkpoint: expected tensor '" + e.name + "', found '" + name + "'");
        Tensor t = read_tensor(is);
        if (t.shape() != e.tensor.shape())
            throw DataError("checkpoint: shape mismatch for '" + name + "'");
        auto dst = e.tensor.mut_data();
        auto src = t.data();
        std::copy(src.begin(), src.end(), dst.begin());
    }
}

}  // namespace

void save_checkpoint(const std::string& path, Network& net) {
    ParamStore ps = collect_params(net);
    std::ostringstream payload(std::ios::binary);
    put_str(payload, network_config_to_text(net.cfg));
    put_named_tensors(payload, ps.params);
    put_named_tensors(payload, ps.buffers);
    const std::string body = payload.str();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("checkpoint: cannot open " + path + " for writing");
    os.write(kCkptMagic, 8);
    put_u32(os, kCkptVersion);
    put_u64(os, body.size());
    os.write(body.data(), static_cast<std::streamsize>(body.size()));
    put_u64(os, fnv1a(body));
    if (!os) throw DataError("checkpoint: write failure on " + path);
}

Network load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCkptMagic, 8) != 0)
        throw DataError("checkpoint: bad magic in " + path);
    std::uint32_t version = get_u32(is);
    if (version != kCkptVersion) throw DataError("checkpoint: unsupported version");
    std::uint64_t body_len = get_u64(is);
    std::string body(body_len, '\0');
    is.read(body.data(), static_cast<std::streamsize>(body_len));
    if (!is) throw DataError("checkpoint: truncated payload");
    std::uint64_t digest = get_u64(is);
    if (digest != fnv1a(body)) throw DataError("checkpoint: digest mismatch (corrupt file)");

    std::istringstream bs(body, std::ios::binary);
    NetworkConfig cfg = network_config_from_text(get_str(bs));
    Network net = make_network(cfg);
    ParamStore ps = collect_params(net);
    load_named_tensors(bs, ps.params, "parameter");
    load_named_tensors(bs, ps.buffers, "buffer");
    return net;
}

}  // namespace vffc
