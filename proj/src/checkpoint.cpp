#include "tempoc/checkpoint.hpp"

#include "tempoc/errors.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace tempoc::train {

namespace {

constexpr char kMagic[8] = {'T', 'P', 'C', 'C', 'K', 'P', 'T', '\0'};

class Writer {
public:
    template <typename T>
    void put(T value)
    {
        static_assert(std::is_trivially_copyable_v<T>);
        append(&value, sizeof(T));
    }
    void append(const void* data, size_t size)
    {
        const auto* bytes = static_cast<const char*>(data);
        buffer_.insert(buffer_.end(), bytes, bytes + size);
    }
    void put_string(const std::string& s)
    {
        put<uint32_t>(static_cast<uint32_t>(s.size()));
        append(s.data(), s.size());
    }
    const std::vector<char>& bytes() const { return buffer_; }

private:
    std::vector<char> buffer_;
};

class Reader {
public:
    Reader(const char* data, size_t size) : data_(data), size_(size) {}

    template <typename T>
    T get()
    {
        T value;
        read(&value, sizeof(T));
        return value;
    }
    void read(void* out, size_t n)
    {
        if (n > size_ - pos_)
            throw IntegrityError("checkpoint payload is truncated");
        std::memcpy(out, data_ + pos_, n);
        pos_ += n;
    }
    std::string get_string()
    {
        const auto n = get<uint32_t>();
        std::string s(n, '\0');
        read(s.data(), n);
        return s;
    }
    bool done() const { return pos_ == size_; }

private:
    const char* data_;
    size_t size_;
    size_t pos_ = 0;
};

uint32_t crc_of(const std::vector<char>& bytes)
{
    uLong crc = crc32(0L, Z_NULL, 0);
    size_t offset = 0;
    while (offset < bytes.size()) {
        const auto chunk = static_cast<uInt>(std::min<size_t>(bytes.size() - offset, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + offset), chunk);
        offset += chunk;
    }
    return static_cast<uint32_t>(crc);
}

void write_tensors(Writer& w, const NamedTensors& tensors)
{
    w.put<uint32_t>(static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, tensor] : tensors) {
        auto t = tensor.detach().to(torch::kCPU).contiguous();
        w.put_string(name);
        w.put<int8_t>(static_cast<int8_t>(t.scalar_type()));
        w.put<uint32_t>(static_cast<uint32_t>(t.dim()));
        for (int64_t d : t.sizes())
            w.put<int64_t>(d);
        const auto nbytes = static_cast<uint64_t>(t.nbytes());
        w.put<uint64_t>(nbytes);
        w.append(t.data_ptr(), nbytes);
    }
}

NamedTensors read_tensors(Reader& r)
{
    NamedTensors tensors;
    const auto count = r.get<uint32_t>();
    for (uint32_t i = 0; i < count; ++i) {
        auto name = r.get_string();
        const auto dtype = static_cast<c10::ScalarType>(r.get<int8_t>());
        const auto ndim = r.get<uint32_t>();
        std::vector<int64_t> sizes(ndim);
        for (auto& d : sizes)
            d = r.get<int64_t>();
        const auto nbytes = r.get<uint64_t>();
        auto t = torch::empty(sizes, torch::TensorOptions().dtype(dtype));
        if (static_cast<uint64_t>(t.nbytes()) != nbytes)
            throw IntegrityError("checkpoint tensor '" + name + "' has inconsistent size");
        r.read(t.data_ptr(), nbytes);
        tensors.emplace_back(std::move(name), std::move(t));
    }
    return tensors;
}

json history_json(const std::vector<MetricRow>& rows)
{
    json out = json::array();
    for (const auto& row : rows) {
        out.push_back({{"iteration", row.iteration},
                       {"terms", row.terms},
                       {"total", row.total},
                       {"val_warp_error", row.val_warp_error ? json(*row.val_warp_error) : json(nullptr)}});
    }
    return out;
}

std::vector<MetricRow> history_from(const json& j)
{
    std::vector<MetricRow> rows;
    for (const auto& r : j) {
        MetricRow row;
        row.iteration = r.at("iteration").get<int64_t>();
        row.terms = r.at("terms").get<std::array<double, 4>>();
        row.total = r.at("total").get<double>();
        if (!r.at("val_warp_error").is_null())
            row.val_warp_error = r.at("val_warp_error").get<double>();
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const fs::path& path)
{
    const json meta{{"iteration", checkpoint.iteration},
                    {"estimator", checkpoint.estimator_identifier},
                    {"config", config::to_json(checkpoint.config)},
                    {"history", history_json(checkpoint.history)}};

    Writer payload;
    const std::string meta_text = meta.dump();
    payload.put<uint64_t>(meta_text.size());
    payload.append(meta_text.data(), meta_text.size());
    write_tensors(payload, checkpoint.model);
    write_tensors(payload, checkpoint.reference_flow);
    write_tensors(payload, checkpoint.optimizer);

    Writer file;
    file.append(kMagic, sizeof(kMagic));
    file.put<uint32_t>(kCheckpointVersion);
    file.put<uint64_t>(payload.bytes().size());
    file.append(payload.bytes().data(), payload.bytes().size());
    file.put<uint32_t>(crc_of(payload.bytes()));

    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw std::runtime_error("cannot write checkpoint '" + tmp.string() + "'");
        out.write(file.bytes().data(), static_cast<std::streamsize>(file.bytes().size()));
        out.flush();
        if (!out)
            throw std::runtime_error("failed writing checkpoint '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError("cannot open checkpoint '" + path.string() + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    Reader header(bytes.data(), bytes.size());
    char magic[8];
    header.read(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(magic)) != 0)
        throw IntegrityError("'" + path.string() + "' is not a checkpoint file");
    const auto version = header.get<uint32_t>();
    if (version != kCheckpointVersion)
        throw VersionError("checkpoint '" + path.string() + "' has format version " + std::to_string(version) +
                           ", expected " + std::to_string(kCheckpointVersion));
    const auto size = header.get<uint64_t>();
    constexpr size_t prefix = sizeof(kMagic) + sizeof(uint32_t) + sizeof(uint64_t);
    if (bytes.size() != prefix + size + sizeof(uint32_t))
        throw IntegrityError("checkpoint '" + path.string() + "' is truncated");

    std::vector<char> payload(bytes.begin() + prefix, bytes.begin() + static_cast<std::ptrdiff_t>(prefix + size));
    uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + prefix + size, sizeof(stored_crc));
    if (stored_crc != crc_of(payload))
        throw IntegrityError("checkpoint '" + path.string() + "' failed its checksum");

    Reader r(payload.data(), payload.size());
    Checkpoint ckpt;
    try {
        const auto meta_size = r.get<uint64_t>();
        std::string meta_text(meta_size, '\0');
        r.read(meta_text.data(), meta_size);
        const auto meta = json::parse(meta_text);
        ckpt.iteration = meta.at("iteration").get<int64_t>();
        ckpt.estimator_identifier = meta.at("estimator").get<std::string>();
        ckpt.config = config::from_json(meta.at("config"));
        ckpt.history = history_from(meta.at("history"));
    } catch (const json::exception& e) {
        throw IntegrityError("checkpoint metadata is invalid: " + std::string(e.what()));
    }
    ckpt.model = read_tensors(r);
    ckpt.reference_flow = read_tensors(r);
    ckpt.optimizer = read_tensors(r);
    if (!r.done())
        throw IntegrityError("checkpoint has trailing bytes");
    return ckpt;
}

NamedTensors capture_state(const torch::nn::Module& module)
{
    NamedTensors state;
    for (const auto& p : module.named_parameters(true))
        state.emplace_back(p.key(), p.value().detach().to(torch::kCPU).clone());
    for (const auto& b : module.named_buffers(true))
        state.emplace_back(b.key(), b.value().detach().to(torch::kCPU).clone());
    return state;
}

void restore_state(torch::nn::Module& module, const NamedTensors& state)
{
    torch::NoGradGuard no_grad;
    auto params = module.named_parameters(true);
    auto buffers = module.named_buffers(true);
    TEMPOC_REQUIRE(state.size() == params.size() + buffers.size(),
                   "checkpoint does not match the model (tensor count differs)");
    for (const auto& [name, value] : state) {
        torch::Tensor* slot = params.find(name);
        if (slot == nullptr)
            slot = buffers.find(name);
        TEMPOC_REQUIRE(slot != nullptr, "checkpoint tensor '" + name + "' has no counterpart in the model");
        TEMPOC_REQUIRE(slot->sizes() == value.sizes() && slot->scalar_type() == value.scalar_type(),
                       "checkpoint tensor '" + name + "' has the wrong shape or dtype");
        slot->copy_(value);
    }
}

NamedTensors capture_adam(torch::optim::Adam& optimizer, const torch::nn::Module& module)
{
    NamedTensors state;
    auto& table = optimizer.state();
    for (const auto& p : module.named_parameters(true)) {
        auto it = table.find(p.value().unsafeGetTensorImpl());
        if (it == table.end())
            continue;
        const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
        state.emplace_back(p.key() + "#step", torch::tensor(s.step(), torch::kLong));
        state.emplace_back(p.key() + "#exp_avg", s.exp_avg().detach().to(torch::kCPU).clone());
        state.emplace_back(p.key() + "#exp_avg_sq", s.exp_avg_sq().detach().to(torch::kCPU).clone());
    }
    return state;
}

void restore_adam(torch::optim::Adam& optimizer, const torch::nn::Module& module, const NamedTensors& state)
{
    std::map<std::string, torch::Tensor> lookup(state.begin(), state.end());
    auto& table = optimizer.state();
    table.clear();
    for (const auto& p : module.named_parameters(true)) {
        auto step = lookup.find(p.key() + "#step");
        if (step == lookup.end())
            continue;
        auto avg = lookup.at(p.key() + "#exp_avg");
        auto avg_sq = lookup.at(p.key() + "#exp_avg_sq");
        TEMPOC_REQUIRE(avg.sizes() == p.value().sizes(), "optimizer state for '" + p.key() + "' has the wrong shape");
        auto s = std::make_unique<torch::optim::AdamParamState>();
        s->step(step->second.item<int64_t>());
        s->exp_avg(avg.to(p.value().device()).clone());
        s->exp_avg_sq(avg_sq.to(p.value().device()).clone());
        table[p.value().unsafeGetTensorImpl()] = std::move(s);
    }
}

bool bitwise_equal(const NamedTensors& a, const NamedTensors& b)
{
    if (a.size() != b.size())
        return false;
    for (size_t i = 0; i < a.size(); ++i) {
        const auto& x = a[i].second;
        const auto& y = b[i].second;
        if (a[i].first != b[i].first || x.sizes() != y.sizes() || x.scalar_type() != y.scalar_type())
            return false;
        auto xc = x.contiguous();
        auto yc = y.contiguous();
        if (std::memcmp(xc.data_ptr(), yc.data_ptr(), xc.nbytes()) != 0)
            return false;
    }
    return true;
}

}  // namespace tempoc::train
