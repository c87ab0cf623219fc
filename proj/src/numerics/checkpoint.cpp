#include "charadial/numerics/checkpoint.hpp"

#include <cstring>

namespace charadial::numerics {

namespace {

constexpr char kMagic[8] = {'C', 'H', 'D', 'L', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  template <typename V>
  void put(V v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    out_.append(p, sizeof(V));
  }
  void put_bytes(std::string_view s) { out_.append(s); }
  template <typename V>
  void put_values(std::span<const V> values) {
    out_.append(reinterpret_cast<const char*>(values.data()), values.size_bytes());
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  template <typename V>
  V get() {
    V v;
    std::memcpy(&v, take(sizeof(V)).data(), sizeof(V));
    return v;
  }
  std::string_view take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw DataError("checkpoint truncated at byte " + std::to_string(pos_));
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename T>
  std::vector<T> get_values(std::size_t count, bool stored_f64) {
    std::vector<T> out(count);
    if (stored_f64) {
      auto raw = take(count * sizeof(double));
      for (std::size_t i = 0; i < count; ++i) {
        double v;
        std::memcpy(&v, raw.data() + i * sizeof(double), sizeof(double));
        out[i] = static_cast<T>(v);
      }
    } else {
      auto raw = take(count * sizeof(float));
      for (std::size_t i = 0; i < count; ++i) {
        float v;
        std::memcpy(&v, raw.data() + i * sizeof(float), sizeof(float));
        out[i] = static_cast<T>(v);
      }
    }
    return out;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::pair<Json, bool> read_preamble(Reader& in) {
  if (in.take(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) {
    throw DataError("not a checkpoint file (bad magic)");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto precision = in.get<std::uint8_t>();
  if (precision > 1) throw DataError("unknown checkpoint precision tag");
  const auto header_len = in.get<std::uint64_t>();
  Json header = Json::parse(in.take(header_len));
  return {std::move(header), precision == 1};
}

}  // namespace

template <typename T>
std::string serialize_checkpoint(const Json& header, const ParameterStore<T>& params,
                                 const AdamState<T>* optimizer) {
  Writer out;
  out.put_bytes(std::string_view(kMagic, sizeof(kMagic)));
  out.put<std::uint32_t>(kCheckpointVersion);
  out.put<std::uint8_t>(precision_of<T>() == Precision::f64 ? 1 : 0);
  const std::string h = header.dump();
  out.put<std::uint64_t>(h.size());
  out.put_bytes(h);
  out.put<std::uint64_t>(params.size());
  for (const auto& [name, tensor] : params) {
    out.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    out.put_bytes(name);
    out.put<std::uint32_t>(static_cast<std::uint32_t>(tensor.rank()));
    for (auto d : tensor.shape()) out.put<std::uint64_t>(d);
    out.put_values<T>(tensor.data());
  }
  out.put<std::uint8_t>(optimizer != nullptr ? 1 : 0);
  if (optimizer != nullptr) {
    out.put<std::uint64_t>(optimizer->step);
    out.put<double>(optimizer->learning_rate);
    out.put<double>(optimizer->beta1);
    out.put<double>(optimizer->beta2);
    out.put<double>(optimizer->epsilon);
    const bool has_moments = !optimizer->first_moment.empty();
    out.put<std::uint8_t>(has_moments ? 1 : 0);
    if (has_moments) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        out.put_values<T>(optimizer->first_moment.at(i));
        out.put_values<T>(optimizer->second_moment.at(i));
      }
    }
  }
  return out.take();
}

template <typename T>
Checkpoint<T> deserialize_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  Checkpoint<T> ckpt;
  bool stored_f64 = false;
  std::tie(ckpt.header, stored_f64) = read_preamble(in);
  const auto count = in.get<std::uint64_t>();
  std::vector<std::size_t> sizes;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = in.get<std::uint32_t>();
    std::string name(in.take(name_len));
    const auto rank = in.get<std::uint32_t>();
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(in.get<std::uint64_t>());
    const auto n = shape_size(shape);
    ckpt.params.add(std::move(name), Tensor<T>(shape, in.get_values<T>(n, stored_f64)));
    sizes.push_back(n);
  }
  if (in.get<std::uint8_t>() == 1) {
    AdamState<T> state;
    state.step = in.get<std::uint64_t>();
    state.learning_rate = in.get<double>();
    state.beta1 = in.get<double>();
    state.beta2 = in.get<double>();
    state.epsilon = in.get<double>();
    if (in.get<std::uint8_t>() == 1) {
      for (auto n : sizes) {
        state.first_moment.push_back(in.get_values<T>(n, stored_f64));
        state.second_moment.push_back(in.get_values<T>(n, stored_f64));
      }
    }
    ckpt.optimizer = std::move(state);
  }
  if (!in.done()) throw DataError("trailing bytes after checkpoint payload");
  return ckpt;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Json& header,
                     const ParameterStore<T>& params, const AdamState<T>* optimizer) {
  atomic_write(path, serialize_checkpoint(header, params, optimizer));
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint<T>(read_file(path));
}

std::pair<Json, Precision> peek_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  Reader in(bytes);
  auto [header, f64] = read_preamble(in);
  return {std::move(header), f64 ? Precision::f64 : Precision::f32};
}

template std::string serialize_checkpoint(const Json&, const ParameterStore<float>&,
                                          const AdamState<float>*);
template std::string serialize_checkpoint(const Json&, const ParameterStore<double>&,
                                          const AdamState<double>*);
template Checkpoint<float> deserialize_checkpoint(std::string_view);
template Checkpoint<double> deserialize_checkpoint(std::string_view);
template void save_checkpoint(const std::filesystem::path&, const Json&,
                              const ParameterStore<float>&, const AdamState<float>*);
template void save_checkpoint(const std::filesystem::path&, const Json&,
                              const ParameterStore<double>&, const AdamState<double>*);
template Checkpoint<float> load_checkpoint(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint(const std::filesystem::path&);

}  // namespace charadial::numerics
