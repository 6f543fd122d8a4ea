// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace morphforge {

/// Bad input: malformed files, invalid parameters, mismatched grids.
/// The CLI maps these to exit code 2.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Parse failure carrying the byte offset at which it happened.
class ParseError : public InputError {
public:
    ParseError(const std::string &what, std::size_t offset)
        : InputError(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class EmptyMeshError : public InputError {
public:
    using InputError::InputError;
};

class ValidationError : public InputError {
public:
    using InputError::InputError;
};

class GridMismatchError : public InputError {
public:
    using InputError::InputError;
};

/// Closed-surface requirement violated.
class OpenSurfaceError : public InputError {
public:
    OpenSurfaceError(std::size_t boundary_edges, std::size_t nonmanifold_edges)
        : InputError("mesh is not watertight: " + std::to_string(boundary_edges) + " boundary edge(s), " +
                     std::to_string(nonmanifold_edges) + " non-manifold edge(s)"),
          boundary_edges_(boundary_edges), nonmanifold_edges_(nonmanifold_edges) {}
    std::size_t boundary_edges() const noexcept { return boundary_edges_; }
    std::size_t nonmanifold_edges() const noexcept { return nonmanifold_edges_; }

private:
    std::size_t boundary_edges_;
    std::size_t nonmanifold_edges_;
};

class DegenerateError : public InputError {
public:
    using InputError::InputError;
};

/// Metric undefined for the given inputs (e.g. HD95 of an empty image).
class UndefinedMetricError : public InputError {
public:
    using InputError::InputError;
};

/// Numerical failure such as a diverging iteration. Exit code 3.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace morphforge
