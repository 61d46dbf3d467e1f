#pragma once

#include "fracctl/spectral_core.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace fracctl::io {

// %.17g; "nan", "inf", "-inf" for non-finite values
std::string fmt(double v);
// strtod with full-string check; accepts the spellings produced by fmt
double parse_double(std::string_view text);

class CsvWriter {
public:
    explicit CsvWriter(const std::vector<std::string>& header);
    CsvWriter& row(const std::vector<double>& values);
    // leading integer columns followed by reals
    CsvWriter& row(const std::vector<long long>& ints, const std::vector<double>& values);
    const std::string& str() const { return out_; }

private:
    std::size_t columns_;
    std::string out_;
};

// Minimal streaming JSON writer with deterministic layout: numbers at 17
// significant digits, non-finite numbers as null.
class JsonWriter {
public:
    JsonWriter& begin_object();
    JsonWriter& end_object();
    JsonWriter& begin_array();
    JsonWriter& end_array();
    JsonWriter& key(std::string_view k);
    JsonWriter& value(double v);
    JsonWriter& value(long long v);
    JsonWriter& value(int v) { return value(static_cast<long long>(v)); }
    JsonWriter& value(bool v);
    JsonWriter& value(std::string_view v);
    JsonWriter& value(const char* v) { return value(std::string_view(v)); }
    JsonWriter& null();
    JsonWriter& value(const Eigen::VectorXd& v);
    JsonWriter& value(const Eigen::MatrixXd& m);  // array of rows
    std::string str() const;

private:
    void separate();
    void close(char bracket);
    std::string out_;
    std::vector<bool> first_;  // per open container
    bool after_key_ = false;
};

std::string escape_json(std::string_view s);

// Writes to a temporary sibling and renames it into place.
void write_file(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

// Exclusive advisory lock on <dir>/.lock for the lifetime of the object.
class CacheLock {
public:
    explicit CacheLock(const std::filesystem::path& dir);
    ~CacheLock();
    CacheLock(const CacheLock&) = delete;
    CacheLock& operator=(const CacheLock&) = delete;

private:
    int fd_ = -1;
};

inline constexpr const char* kBasisFormat = "fracctl-basis 1";

std::string basis_cache_name(FracOrder s, int interior_nodes, int N);
void save_basis(const std::filesystem::path& path, const SpectralBasis& basis);
SpectralBasis load_basis(const std::filesystem::path& path);

// Loads <dir>/<basis_cache_name> or computes and stores it; hit reports which.
SpectralBasis cached_basis(const std::filesystem::path& dir, FracOrder s, int interior_nodes, int N,
                           bool* hit = nullptr);

}  // namespace fracctl::io
