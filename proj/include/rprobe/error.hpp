#pragma once

#include <stdexcept>
#include <string>

namespace rprobe {

// Root of every error raised by the toolkit. Each subclass maps to one
// failure class that callers (and the CLI exit codes) distinguish.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(std::size_t record_index, std::string field, const std::string& what)
        : Error(what), record_index_(record_index), field_(std::move(field)) {}

    std::size_t record_index() const { return record_index_; }
    const std::string& field() const { return field_; }

private:
    std::size_t record_index_;
    std::string field_;
};

class EmptyCorpusError : public Error {
public:
    using Error::Error;
};

// Model files missing or unreadable.
class EnvironmentError : public Error {
public:
    using Error::Error;
};

class StorageError : public Error {
public:
    using Error::Error;
};

class PoolingMismatchError : public Error {
public:
    using Error::Error;
};

class CacheMissError : public Error {
public:
    CacheMissError(std::string text_hash, const std::string& what)
        : Error(what), text_hash_(std::move(text_hash)) {}
    const std::string& text_hash() const { return text_hash_; }

private:
    std::string text_hash_;
};

class TrainingError : public Error {
public:
    TrainingError(int epoch, const std::string& what) : Error(what), epoch_(epoch) {}
    int epoch() const { return epoch_; }

private:
    int epoch_;
};

class AttributionError : public Error {
public:
    using Error::Error;
};

class InsufficientDataError : public Error {
public:
    using Error::Error;
};

class PairingError : public Error {
public:
    using Error::Error;
};

class ComparisonError : public Error {
public:
    using Error::Error;
};

}  // namespace rprobe
