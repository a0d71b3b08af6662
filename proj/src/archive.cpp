#include "sapnet/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sapnet/errors.hpp"

namespace sapnet {

namespace {

constexpr char kMagic[8] = {'S', 'A', 'P', 'N', 'E', 'T', 'A', 'R'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "archive encoding assumes a little-endian host");

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("archive truncated at byte " + std::to_string(pos_));
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor& Archive::tensor(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw IoError("archive has no entry '" + key + "'");
  if (auto* t = std::get_if<Tensor>(&it->second)) return *t;
  throw IoError("archive entry '" + key + "' is not a tensor");
}

const std::string& Archive::text(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw IoError("archive has no entry '" + key + "'");
  if (auto* s = std::get_if<std::string>(&it->second)) return *s;
  throw IoError("archive entry '" + key + "' is not text");
}

std::int64_t Archive::integer(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw IoError("archive has no entry '" + key + "'");
  if (auto* v = std::get_if<std::int64_t>(&it->second)) return *v;
  throw IoError("archive entry '" + key + "' is not an integer");
}

std::vector<std::string> Archive::keys_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (auto it = entries_.lower_bound(prefix); it != entries_.end() && it->first.starts_with(prefix); ++it) {
    out.push_back(it->first);
  }
  return out;
}

std::string Archive::serialize() const {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [key, value] : entries_) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(key.size()));
    out += key;
    if (const auto* t = std::get_if<Tensor>(&value)) {
      put<std::uint8_t>(out, 0);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t->rank()));
      for (int d : t->shape()) put<std::int32_t>(out, d);
      out.append(reinterpret_cast<const char*>(t->data()), t->size() * sizeof(double));
    } else if (const auto* s = std::get_if<std::string>(&value)) {
      put<std::uint8_t>(out, 1);
      put<std::uint64_t>(out, s->size());
      out += *s;
    } else {
      put<std::uint8_t>(out, 2);
      put<std::int64_t>(out, std::get<std::int64_t>(value));
    }
  }
  return out;
}

Archive Archive::deserialize(const std::string& bytes) {
  Reader r(bytes);
  if (r.get_bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) throw IoError("not a sapnet archive");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw IoError("unsupported archive version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  Archive a;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string key = r.get_bytes(r.get<std::uint32_t>());
    switch (r.get<std::uint8_t>()) {
      case 0: {
        const auto rank = r.get<std::uint32_t>();
        std::vector<int> shape(rank);
        for (auto& d : shape) d = r.get<std::int32_t>();
        std::vector<double> data(element_count(shape));
        const std::string raw = r.get_bytes(data.size() * sizeof(double));
        std::memcpy(data.data(), raw.data(), raw.size());
        a.put_tensor(key, Tensor(std::move(shape), std::move(data)));
        break;
      }
      case 1:
        a.put_text(key, r.get_bytes(r.get<std::uint64_t>()));
        break;
      case 2:
        a.put_int(key, r.get<std::int64_t>());
        break;
      default:
        throw IoError("archive entry '" + key + "' has an unknown tag");
    }
  }
  if (!r.done()) throw IoError("archive has trailing bytes");
  return a;
}

void Archive::save(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::string bytes = serialize();
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

Archive Archive::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str());
}

}  // namespace sapnet
