#include "affr/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace affr {

namespace {

constexpr char kMagic[8] = {'A', 'F', 'R', 'C', 'H', 'K', '1', '\n'};
constexpr uint8_t kDtypeF8 = 0;

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw CheckpointError("negative dimension in array shape");
    n *= d;
  }
  return n;
}

struct Writer {
  std::ofstream out;
  explicit Writer(const std::string& path) : out(path, std::ios::binary) {
    if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
  }
  void bytes(const void* p, size_t n) { out.write(static_cast<const char*>(p), std::streamsize(n)); }
  void u8(uint8_t v) { bytes(&v, 1); }
  void u32(uint32_t v) { bytes(&v, 4); }
  void u64(uint64_t v) { bytes(&v, 8); }
  void i64(int64_t v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u32(uint32_t(s.size()));
    bytes(s.data(), s.size());
  }
};

struct Reader {
  std::vector<char> buf;
  int64_t pos = 0;
  explicit Reader(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open '" + path + "' for reading");
    buf.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  void bytes(void* p, size_t n) {
    if (pos + int64_t(n) > int64_t(buf.size()))
      throw CheckpointError("truncated checkpoint at byte offset " + std::to_string(pos) +
                                " (need " + std::to_string(n) + " more bytes, file has " +
                                std::to_string(buf.size()) + ")",
                            pos);
    std::memcpy(p, buf.data() + pos, n);
    pos += int64_t(n);
  }
  uint8_t u8() {
    uint8_t v;
    bytes(&v, 1);
    return v;
  }
  uint32_t u32() {
    uint32_t v;
    bytes(&v, 4);
    return v;
  }
  uint64_t u64() {
    uint64_t v;
    bytes(&v, 8);
    return v;
  }
  int64_t i64() {
    int64_t v;
    bytes(&v, 8);
    return v;
  }
  std::string str() {
    uint32_t n = u32();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
};

}  // namespace

void Checkpoint::add(const std::string& name, std::vector<int> shape, std::vector<double> data) {
  if (arrays.count(name)) throw CheckpointError("duplicate array name '" + name + "'");
  if (shape_numel(shape) != int64_t(data.size()))
    throw CheckpointError("array '" + name + "' shape does not match its data length");
  arrays.emplace(name, NamedArray{std::move(shape), std::move(data)});
}

void Checkpoint::save(const std::string& path) const {
  Writer w(path);
  w.bytes(kMagic, sizeof(kMagic));
  w.u32(version);
  w.str(config_hash);
  w.u64(arrays.size());
  for (const auto& [name, arr] : arrays) {
    w.str(name);
    w.u8(kDtypeF8);
    w.u32(uint32_t(arr.shape.size()));
    for (int d : arr.shape) w.i64(d);
    w.bytes(arr.data.data(), arr.data.size() * sizeof(double));
  }
  w.out.flush();
  if (!w.out) throw CheckpointError("write to '" + path + "' failed");
}

Checkpoint Checkpoint::load(const std::string& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("'" + path + "' is not a checkpoint file (bad magic)");
  Checkpoint ck;
  ck.version = r.u32();
  if (ck.version != 1)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(ck.version));
  ck.config_hash = r.str();
  uint64_t n = r.u64();
  for (uint64_t i = 0; i < n; ++i) {
    std::string name = r.str();
    uint8_t dtype = r.u8();
    if (dtype != kDtypeF8)
      throw CheckpointError("array '" + name + "' has unsupported dtype code " +
                            std::to_string(int(dtype)));
    uint32_t ndim = r.u32();
    std::vector<int> shape(ndim);
    for (uint32_t d = 0; d < ndim; ++d) shape[d] = int(r.i64());
    int64_t numel = shape_numel(shape);
    std::vector<double> data(size_t(numel), 0.0);
    r.bytes(data.data(), size_t(numel) * sizeof(double));
    ck.add(name, std::move(shape), std::move(data));
  }
  if (r.pos != int64_t(r.buf.size()))
    throw CheckpointError("trailing bytes after checkpoint payload at byte offset " +
                              std::to_string(r.pos),
                          r.pos);
  return ck;
}

namespace {

std::vector<double> to_doubles(const std::vector<ad::real>& v) {
  return std::vector<double>(v.begin(), v.end());
}

std::vector<ad::real> to_reals(const std::vector<double>& v) {
  return std::vector<ad::real>(v.begin(), v.end());
}

}  // namespace

Checkpoint checkpoint_from_params(const nn::ParamStore& ps, const std::string& config_hash) {
  Checkpoint ck;
  ck.config_hash = config_hash;
  for (const auto& [name, e] : ps.entries()) {
    ck.add("param." + name, e.shape, to_doubles(e.value));
    ck.add("adam.m." + name, e.shape, to_doubles(e.m));
    ck.add("adam.v." + name, e.shape, to_doubles(e.v));
  }
  return ck;
}

void params_from_checkpoint(const Checkpoint& ck, nn::ParamStore& ps) {
  for (auto& [name, e] : ps.entries()) {
    auto it = ck.arrays.find("param." + name);
    if (it == ck.arrays.end())
      throw CheckpointError("checkpoint lacks parameter '" + name + "'");
    if (it->second.shape != e.shape)
      throw CheckpointError("parameter '" + name + "' has mismatched shape in checkpoint");
    e.value = to_reals(it->second.data);
    auto im = ck.arrays.find("adam.m." + name);
    auto iv = ck.arrays.find("adam.v." + name);
    if (im != ck.arrays.end()) e.m = to_reals(im->second.data);
    if (iv != ck.arrays.end()) e.v = to_reals(iv->second.data);
  }
}

void add_bank_to_checkpoint(Checkpoint& ck, const MemoryBank& bank) {
  for (const auto& [name, data] : bank.export_arrays())
    ck.add(name, {int(data.size())}, data);
}

bool checkpoint_has_bank(const Checkpoint& ck) { return ck.arrays.count("bank.shape") != 0; }

MemoryBank bank_from_checkpoint(const Checkpoint& ck) {
  auto it = ck.arrays.find("bank.shape");
  if (it == ck.arrays.end()) throw CheckpointError("checkpoint holds no memory bank");
  const std::vector<double>& s = it->second.data;
  if (s.size() != 4) throw CheckpointError("bank.shape must hold {n_task, n_mem, d, k}");
  MemoryBank bank{int(s[0]), int(s[1]), int(s[2]), int(s[3])};
  std::map<std::string, std::vector<double>> flat;
  for (const auto& [name, arr] : ck.arrays)
    if (name.rfind("bank.", 0) == 0) flat.emplace(name, arr.data);
  bank.import_arrays(flat);
  return bank;
}

Checkpoint load_checkpoint_for(const std::string& path, const std::string& expected_hash,
                               bool force) {
  Checkpoint ck = Checkpoint::load(path);
  if (!force && ck.config_hash != expected_hash)
    throw CheckpointError("checkpoint config hash " + ck.config_hash +
                          " does not match the current config hash " + expected_hash +
                          " (pass --force to load anyway)");
  return ck;
}

}  // namespace affr
