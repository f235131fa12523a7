#include "spikeseg/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace spikeseg {

namespace {

// x86-64 target: host order is little-endian, payloads are written raw.

void put_u32(std::string& out, uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

void put_u64(std::string& out, uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.append(b, 8);
}

void put_f32(std::string& out, float v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.append(s);
}

void put_array(std::string& out, const std::string& name, const std::vector<uint32_t>& dims,
               const float* data, size_t count) {
  put_str(out, name);
  out.push_back(static_cast<char>(0));  // dtype 0 = float32
  out.push_back(static_cast<char>(dims.size()));
  for (uint32_t d : dims) put_u32(out, d);
  out.append(reinterpret_cast<const char*>(data), count * sizeof(float));
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  const std::string& path;

  void need(size_t n) const {
    if (pos + n > buf.size()) throw io_error("checkpoint truncated: " + path);
  }
  uint32_t u32() {
    need(4);
    uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v;
    std::memcpy(&v, buf.data() + pos, 8);
    pos += 8;
    return v;
  }
  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(buf[pos++]);
  }
  std::string str() {
    const uint32_t n = u32();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  std::vector<float> f32s(size_t count) {
    need(count * sizeof(float));
    std::vector<float> v(count);
    std::memcpy(v.data(), buf.data() + pos, count * sizeof(float));
    pos += count * sizeof(float);
    return v;
  }
};

struct NamedArray {
  std::vector<uint32_t> dims;
  std::vector<float> data;
};

NamedArray read_array(Reader& r, std::string& name) {
  name = r.str();
  const uint8_t dtype = r.u8();
  if (dtype != 0) throw io_error("checkpoint: unknown dtype in " + r.path);
  const uint8_t ndim = r.u8();
  NamedArray a;
  size_t count = 1;
  for (int i = 0; i < ndim; i++) {
    a.dims.push_back(r.u32());
    count *= a.dims.back();
  }
  a.data = r.f32s(count);
  return a;
}

std::string layer_key(size_t l, const char* suffix) {
  return "L" + std::to_string(l) + "." + suffix;
}

void collect_param_arrays(const ModelParams& params, std::string& out) {
  uint32_t count = 0;
  std::string body;
  for (size_t l = 0; l < params.layers.size(); l++) {
    const LayerParams& lp = params.layers[l];
    if (!lp.weights.empty()) {
      const Shape4 s = lp.weights.shape();
      put_array(body, layer_key(l, "w"),
                {static_cast<uint32_t>(s.n), static_cast<uint32_t>(s.c),
                 static_cast<uint32_t>(s.h), static_cast<uint32_t>(s.w)},
                lp.weights.data(), static_cast<size_t>(lp.weights.size()));
      count++;
    }
    if (!lp.bias.empty()) {
      put_array(body, layer_key(l, "b"), {static_cast<uint32_t>(lp.bias.size())},
                lp.bias.data(), lp.bias.size());
      count++;
    }
    if (!lp.thresholds.empty()) {
      put_array(body, layer_key(l, "theta"), {static_cast<uint32_t>(lp.thresholds.size())},
                lp.thresholds.data(), lp.thresholds.size());
      count++;
    }
    if (lp.bntt) {
      const auto& p = *lp.bntt;
      const std::vector<uint32_t> dims = {static_cast<uint32_t>(p.steps),
                                          static_cast<uint32_t>(p.channels)};
      put_array(body, layer_key(l, "bntt_gamma"), dims, p.gamma.data(), p.gamma.size());
      put_array(body, layer_key(l, "bntt_mean"), dims, p.running_mean.data(),
                p.running_mean.size());
      put_array(body, layer_key(l, "bntt_var"), dims, p.running_var.data(),
                p.running_var.size());
      count += 3;
    }
    if (lp.bn) {
      const auto& p = *lp.bn;
      const std::vector<uint32_t> dims = {static_cast<uint32_t>(p.channels)};
      put_array(body, layer_key(l, "bn_gamma"), dims, p.gamma.data(), p.gamma.size());
      put_array(body, layer_key(l, "bn_beta"), dims, p.beta.data(), p.beta.size());
      put_array(body, layer_key(l, "bn_mean"), dims, p.running_mean.data(),
                p.running_mean.size());
      put_array(body, layer_key(l, "bn_var"), dims, p.running_var.data(),
                p.running_var.size());
      count += 4;
    }
  }
  put_u32(out, count);
  out.append(body);
}

void collect_optim_arrays(const OptimState& opt, std::string& out) {
  uint32_t count = 0;
  std::string body;
  auto put_vec = [&](const std::string& name, const std::vector<float>& v) {
    if (v.empty()) return;
    put_array(body, name, {static_cast<uint32_t>(v.size())}, v.data(), v.size());
    count++;
  };
  auto put_tensor = [&](const std::string& name, const Tensor4& t) {
    if (t.empty()) return;
    const Shape4 s = t.shape();
    put_array(body, name,
              {static_cast<uint32_t>(s.n), static_cast<uint32_t>(s.c),
               static_cast<uint32_t>(s.h), static_cast<uint32_t>(s.w)},
              t.data(), static_cast<size_t>(t.size()));
    count++;
  };
  for (size_t l = 0; l < opt.m_w.size(); l++) {
    put_tensor("m." + layer_key(l, "w"), opt.m_w[l]);
    put_tensor("v." + layer_key(l, "w"), opt.v_w[l]);
    put_vec("m." + layer_key(l, "bntt_gamma"), opt.m_bntt[l]);
    put_vec("v." + layer_key(l, "bntt_gamma"), opt.v_bntt[l]);
    put_vec("m." + layer_key(l, "bn_gamma"), opt.m_bn_g[l]);
    put_vec("v." + layer_key(l, "bn_gamma"), opt.v_bn_g[l]);
    put_vec("m." + layer_key(l, "bn_beta"), opt.m_bn_b[l]);
    put_vec("v." + layer_key(l, "bn_beta"), opt.v_bn_b[l]);
  }
  put_u32(out, count);
  out.append(body);
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string out;
  out.append("SSEG");
  put_u32(out, kCheckpointVersion);
  put_str(out, ckpt.spec.serialize());

  out.push_back(static_cast<char>(static_cast<uint8_t>(ckpt.params.mode)));
  put_u32(out, static_cast<uint32_t>(ckpt.params.timesteps));
  put_f32(out, ckpt.params.leak);
  put_f32(out, ckpt.params.threshold);

  put_u32(out, static_cast<uint32_t>(ckpt.meta.size()));
  for (const auto& [k, v] : ckpt.meta) {
    put_str(out, k);
    put_str(out, v);
  }

  collect_param_arrays(ckpt.params, out);

  out.push_back(static_cast<char>(ckpt.optim && ckpt.optim->initialized ? 1 : 0));
  if (ckpt.optim && ckpt.optim->initialized) {
    put_u64(out, static_cast<uint64_t>(ckpt.optim->step));
    collect_optim_arrays(*ckpt.optim, out);
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw io_error("cannot write checkpoint: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw io_error("checkpoint write failed: " + path);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw io_error("checkpoint rename failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open checkpoint: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string buf = ss.str();
  Reader r{buf, 0, path};

  r.need(4);
  if (buf.compare(0, 4, "SSEG") != 0) throw io_error("not a checkpoint (bad magic): " + path);
  r.pos = 4;
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw io_error("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                   std::to_string(kCheckpointVersion) + "): " + path);

  Checkpoint ckpt;
  ckpt.spec = NetworkSpec::parse(r.str());
  ckpt.params.mode = static_cast<Mode>(r.u8());
  ckpt.params.timesteps = static_cast<int>(r.u32());
  {
    const uint32_t leak_bits = r.u32();
    std::memcpy(&ckpt.params.leak, &leak_bits, 4);
    const uint32_t th_bits = r.u32();
    std::memcpy(&ckpt.params.threshold, &th_bits, 4);
  }
  const uint32_t meta_count = r.u32();
  for (uint32_t i = 0; i < meta_count; i++) {
    std::string k = r.str();
    ckpt.meta[k] = r.str();
  }

  ckpt.params.layers.resize(ckpt.spec.layers.size());
  const uint32_t array_count = r.u32();
  for (uint32_t i = 0; i < array_count; i++) {
    std::string name;
    NamedArray a = read_array(r, name);
    const auto dot = name.find('.');
    if (dot == std::string::npos || name[0] != 'L')
      throw io_error("checkpoint: unexpected array " + name);
    const size_t l = std::stoul(name.substr(1, dot - 1));
    if (l >= ckpt.params.layers.size()) throw io_error("checkpoint: layer index out of range");
    LayerParams& lp = ckpt.params.layers[l];
    const std::string field = name.substr(dot + 1);
    if (field == "w") {
      if (a.dims.size() != 4) throw io_error("checkpoint: weights must be rank 4");
      Tensor4 w(static_cast<int>(a.dims[0]), static_cast<int>(a.dims[1]),
                static_cast<int>(a.dims[2]), static_cast<int>(a.dims[3]));
      std::copy(a.data.begin(), a.data.end(), w.data());
      lp.weights = std::move(w);
    } else if (field == "b") {
      lp.bias = std::move(a.data);
    } else if (field == "theta") {
      lp.thresholds = std::move(a.data);
    } else if (field.rfind("bntt_", 0) == 0) {
      if (!lp.bntt) {
        lp.bntt = BnttParams::init(static_cast<int>(a.dims[0]), static_cast<int>(a.dims[1]));
      }
      if (field == "bntt_gamma") lp.bntt->gamma = std::move(a.data);
      else if (field == "bntt_mean") lp.bntt->running_mean = std::move(a.data);
      else if (field == "bntt_var") lp.bntt->running_var = std::move(a.data);
      else throw io_error("checkpoint: unexpected array " + name);
    } else if (field.rfind("bn_", 0) == 0) {
      if (!lp.bn) lp.bn = BnParams::init(static_cast<int>(a.dims[0]));
      if (field == "bn_gamma") lp.bn->gamma = std::move(a.data);
      else if (field == "bn_beta") lp.bn->beta = std::move(a.data);
      else if (field == "bn_mean") lp.bn->running_mean = std::move(a.data);
      else if (field == "bn_var") lp.bn->running_var = std::move(a.data);
      else throw io_error("checkpoint: unexpected array " + name);
    } else {
      throw io_error("checkpoint: unexpected array " + name);
    }
  }

  const uint8_t has_optim = r.u8();
  if (has_optim) {
    OptimState opt;
    opt.step = static_cast<int64_t>(r.u64());
    opt.initialized = true;
    const size_t L = ckpt.spec.layers.size();
    opt.m_w.resize(L);
    opt.v_w.resize(L);
    opt.m_bntt.resize(L);
    opt.v_bntt.resize(L);
    opt.m_bn_g.resize(L);
    opt.v_bn_g.resize(L);
    opt.m_bn_b.resize(L);
    opt.v_bn_b.resize(L);
    const uint32_t count = r.u32();
    for (uint32_t i = 0; i < count; i++) {
      std::string name;
      NamedArray a = read_array(r, name);
      const bool is_m = name.rfind("m.", 0) == 0;
      const bool is_v = name.rfind("v.", 0) == 0;
      if (!is_m && !is_v) throw io_error("checkpoint: unexpected optimizer array " + name);
      const std::string rest = name.substr(2);
      const auto dot = rest.find('.');
      const size_t l = std::stoul(rest.substr(1, dot - 1));
      const std::string field = rest.substr(dot + 1);
      if (field == "w") {
        Tensor4 t(static_cast<int>(a.dims[0]), static_cast<int>(a.dims[1]),
                  static_cast<int>(a.dims[2]), static_cast<int>(a.dims[3]));
        std::copy(a.data.begin(), a.data.end(), t.data());
        (is_m ? opt.m_w : opt.v_w)[l] = std::move(t);
      } else if (field == "bntt_gamma") {
        (is_m ? opt.m_bntt : opt.v_bntt)[l] = std::move(a.data);
      } else if (field == "bn_gamma") {
        (is_m ? opt.m_bn_g : opt.v_bn_g)[l] = std::move(a.data);
      } else if (field == "bn_beta") {
        (is_m ? opt.m_bn_b : opt.v_bn_b)[l] = std::move(a.data);
      } else {
        throw io_error("checkpoint: unexpected optimizer array " + name);
      }
    }
    ckpt.optim = std::move(opt);
  }
  return ckpt;
}

}  // namespace spikeseg
