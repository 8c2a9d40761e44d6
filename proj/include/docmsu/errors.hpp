// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace docmsu {

/// Input violates a schema or type invariant. Maps to CLI exit code 2.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A required file (checkpoint, dataset, image) does not exist. Exit code 3.
class MissingArtifactError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor or window shapes disagree.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace docmsu
