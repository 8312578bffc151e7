// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace taskmerge {

/// Filesystem failures: missing input, unwritable output.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A file that is not a well-formed safetensors container.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Checkpoints or task vectors whose layer catalogs disagree.
class IncompatibleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Out-of-range hyperparameters, malformed recipes and mask/table shape errors.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

} // namespace taskmerge
