#include "ug/serialize.hpp"

#include <cstring>
#include <fstream>

namespace ug {

namespace {

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}
void put_u64(std::string& out, u64 v) {
  for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}
  void need(size_t n) const {
    if (pos + n > buf.size()) throw io_error("tensor file: truncated");
  }
  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(buf[pos++]);
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
    return v;
  }
  u64 u64v() {
    need(8);
    u64 v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<u64>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

std::vector<std::pair<std::string, std::string>> parse_config(const std::string& blob) {
  std::vector<std::pair<std::string, std::string>> out;
  size_t start = 0;
  while (start < blob.size()) {
    size_t nl = blob.find('\n', start);
    if (nl == std::string::npos) nl = blob.size();
    std::string line = blob.substr(start, nl - start);
    start = nl + 1;
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) throw io_error("tensor file: config line without '=': " + line);
    out.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return out;
}

TensorFile load_impl(const std::string& path, const std::string& expected_magic, bool header_only) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(buf);

  TensorFile f;
  f.magic = r.bytes(expected_magic.size());
  if (f.magic != expected_magic)
    throw io_error(path + ": bad magic, expected " + expected_magic);
  if (r.u8() != '\n') throw io_error(path + ": bad magic terminator");
  uint32_t clen = r.u32();
  f.config = parse_config(r.bytes(clen));
  if (header_only) return f;

  uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    TensorFile::Entry e;
    uint32_t nlen = r.u32();
    e.name = r.bytes(nlen);
    uint8_t dt = r.u8();
    if (dt > 1) throw io_error(path + ": unknown dtype code");
    e.dtype = static_cast<Dtype>(dt);
    e.trainable = (r.u8() & 1) != 0;
    uint32_t rank = r.u32();
    i64 numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      i64 ext = static_cast<i64>(r.u64v());
      e.shape.push_back(ext);
      numel *= ext;
    }
    std::string raw = r.bytes(static_cast<size_t>(numel) * dtype_size(e.dtype));
    e.raw.assign(raw.begin(), raw.end());
    f.entries.push_back(std::move(e));
  }
  if (r.pos != buf.size()) throw io_error(path + ": trailing bytes");
  return f;
}

}  // namespace

void TensorFile::set(const std::string& key, const std::string& value) {
  for (auto& kv : config)
    if (kv.first == key) {
      kv.second = value;
      return;
    }
  config.emplace_back(key, value);
}

const std::string* TensorFile::find(const std::string& key) const {
  for (const auto& kv : config)
    if (kv.first == key) return &kv.second;
  return nullptr;
}

const std::string& TensorFile::get(const std::string& key) const {
  const std::string* v = find(key);
  if (!v) throw io_error("tensor file: missing config key " + key);
  return *v;
}

const TensorFile::Entry* TensorFile::find_entry(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

const TensorFile::Entry& TensorFile::entry(const std::string& name) const {
  const Entry* e = find_entry(name);
  if (!e) throw io_error("tensor file: missing tensor " + name);
  return *e;
}

template <typename T>
void TensorFile::add_tensor(const std::string& name, const Tensor<T>& t, bool trainable) {
  Entry e;
  e.name = name;
  e.dtype = dtype_of<T>();
  e.trainable = trainable;
  e.shape = t.shape;
  e.raw.resize(t.data.size() * sizeof(T));
  std::memcpy(e.raw.data(), t.data.data(), e.raw.size());
  entries.push_back(std::move(e));
}

template <typename T>
Tensor<T> TensorFile::get_tensor(const std::string& name) const {
  const Entry& e = entry(name);
  if (e.dtype != dtype_of<T>())
    throw io_error("tensor " + name + " has dtype " + dtype_name(e.dtype));
  Tensor<T> t(e.shape);
  if (e.raw.size() != t.data.size() * sizeof(T)) throw io_error("tensor " + name + ": size mismatch");
  std::memcpy(t.data.data(), e.raw.data(), e.raw.size());
  t.requires_grad = e.trainable;
  return t;
}

template void TensorFile::add_tensor<float>(const std::string&, const Tensor<float>&, bool);
template void TensorFile::add_tensor<double>(const std::string&, const Tensor<double>&, bool);
template Tensor<float> TensorFile::get_tensor<float>(const std::string&) const;
template Tensor<double> TensorFile::get_tensor<double>(const std::string&) const;

void save_tensor_file(const std::string& path, const TensorFile& f) {
  std::string out;
  out += f.magic;
  out += '\n';
  std::string cfg;
  for (const auto& kv : f.config) cfg += kv.first + "=" + kv.second + "\n";
  put_u32(out, static_cast<uint32_t>(cfg.size()));
  out += cfg;
  put_u32(out, static_cast<uint32_t>(f.entries.size()));
  for (const auto& e : f.entries) {
    put_u32(out, static_cast<uint32_t>(e.name.size()));
    out += e.name;
    out += static_cast<char>(e.dtype);
    out += static_cast<char>(e.trainable ? 1 : 0);
    put_u32(out, static_cast<uint32_t>(e.shape.size()));
    for (i64 d : e.shape) put_u64(out, static_cast<u64>(d));
    out.append(reinterpret_cast<const char*>(e.raw.data()), e.raw.size());
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io_error("cannot write " + path);
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) throw io_error("write failed: " + path);
}

TensorFile load_tensor_file(const std::string& path, const std::string& expected_magic) {
  return load_impl(path, expected_magic, false);
}

TensorFile load_tensor_file_header(const std::string& path, const std::string& expected_magic) {
  return load_impl(path, expected_magic, true);
}

}  // namespace ug
