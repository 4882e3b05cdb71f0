#include "deepgrading/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "deepgrading/errors.hpp"

namespace dg {

namespace {

template <class T>
void put(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::vector<char> buf) : buf_(std::move(buf)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw DataError("truncated checkpoint");
  }
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace

const Param& Checkpoint::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw DataError("checkpoint has no tensor '" + name + "'");
}

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                      const std::vector<Param>& tensors) {
  std::string out = "DGCK";
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string text = meta.dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& t : tensors) {
    if (t.name.size() > 0xffff || t.shape.size() > 0xff) throw DataError("tensor name or rank too large");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out += t.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
    std::size_t count = 1;
    for (auto d : t.shape) {
      put<std::uint32_t>(out, d);
      count *= d;
    }
    if (count != t.value.size()) throw DataError("tensor '" + t.name + "' shape does not match its data");
    out.append(reinterpret_cast<const char*>(t.value.data()), t.value.size() * sizeof(float));
  }
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  Reader r(std::vector<char>((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>()));
  if (r.bytes(4) != "DGCK") throw DataError("not a DGCK checkpoint: " + path.string());
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  const auto n = r.get<std::uint32_t>();
  try {
    ck.meta = nlohmann::json::parse(r.bytes(n));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad checkpoint metadata: ") + e.what());
  }
  while (!r.done()) {
    Param p;
    p.name = r.bytes(r.get<std::uint16_t>());
    const auto rank = r.get<std::uint8_t>();
    std::size_t count = 1;
    for (int i = 0; i < rank; ++i) {
      p.shape.push_back(r.get<std::uint32_t>());
      count *= p.shape.back();
    }
    const std::string payload = r.bytes(count * sizeof(float));
    p.value.resize(count);
    std::memcpy(p.value.data(), payload.data(), payload.size());
    p.grad.assign(count, 0.0f);
    ck.tensors.push_back(std::move(p));
  }
  return ck;
}

}  // namespace dg
