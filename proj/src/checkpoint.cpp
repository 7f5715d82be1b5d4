#include "wslc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <stdexcept>

namespace wslc {

namespace {

template <typename U>
void put(std::vector<unsigned char>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& b) : bytes_(b) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + static_cast<long>(pos_), bytes_.begin() + static_cast<long>(pos_ + n));
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint truncated at byte " + std::to_string(pos_));
  }

  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<unsigned char> encode_checkpoint(const std::vector<NamedTensor<float>>& params) {
  std::vector<unsigned char> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    if (p.name.size() > std::numeric_limits<std::uint16_t>::max()) throw std::invalid_argument("param name too long");
    if (p.value.ndim() > std::numeric_limits<std::uint8_t>::max()) throw std::invalid_argument("too many dims");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(p.value.ndim()));
    for (std::size_t d : p.value.dims()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (float v : p.value.values()) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

std::vector<NamedTensor<float>> decode_checkpoint(const std::vector<unsigned char>& bytes) {
  Reader r(bytes);
  if (r.get_string(4) != std::string(kCheckpointMagic, 4)) throw std::runtime_error("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  std::vector<NamedTensor<float>> params;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor<float> p;
    p.name = r.get_string(r.get<std::uint16_t>());
    const auto ndim = r.get<std::uint8_t>();
    Shape dims(ndim);
    for (auto& d : dims) d = r.get<std::uint32_t>();
    std::vector<float> data(shape_size(dims));
    for (auto& v : data) v = std::bit_cast<float>(r.get<std::uint32_t>());
    p.value = Tensor(std::move(dims), std::move(data));
    params.push_back(std::move(p));
  }
  if (!r.done()) throw std::runtime_error("trailing bytes after checkpoint payload");
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  const auto bytes = encode_checkpoint(model.params);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path, const ModelSpec& spec) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Model model{spec, decode_checkpoint(bytes), 0};
  check_params(model);
  return model;
}

}  // namespace wslc
