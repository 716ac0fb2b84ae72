#pragma once

#include <stdexcept>
#include <string>

namespace latflow {

/// Base class for every error raised by this library.
/// The CLI maps ConfigError to exit code 2 and every other Error to exit code 1.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor or trajectory dimensions do not line up.
struct ShapeError : Error {
    using Error::Error;
};

/// A scalar argument is outside its documented range.
struct RangeError : Error {
    using Error::Error;
};

/// Bad config file, unknown key, or invalid CLI usage.
struct ConfigError : Error {
    using Error::Error;
};

/// Filesystem trouble: missing file, short read, corrupt container.
struct IoError : Error {
    using Error::Error;
};

/// More entities than identifiers in the pool, or an id out of range.
struct PoolError : Error {
    using Error::Error;
};

/// NaN loss, overflow, or a diverged integration.
struct NumericError : Error {
    using Error::Error;
};

/// Runs fn, rethrowing any library error with "prefix: " prepended while
/// preserving the concrete exception type.
template <typename Fn>
auto with_error_context(const std::string& prefix, Fn&& fn) {
    const auto tag = [&](const std::string& what) { return prefix + ": " + what; };
    try {
        return fn();
    } catch (const ShapeError& e) {
        throw ShapeError(tag(e.what()));
    } catch (const RangeError& e) {
        throw RangeError(tag(e.what()));
    } catch (const ConfigError& e) {
        throw ConfigError(tag(e.what()));
    } catch (const IoError& e) {
        throw IoError(tag(e.what()));
    } catch (const PoolError& e) {
        throw PoolError(tag(e.what()));
    } catch (const NumericError& e) {
        throw NumericError(tag(e.what()));
    }
}

} // namespace latflow
