#pragma once

#include <stdexcept>
#include <string>

namespace adhdnet {

/// Shapes that cannot be combined by an operation.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A value outside the domain an operation accepts.
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// An object used in a state that does not allow the call (e.g. a graph
/// that has already been consumed by backward()).
class StateError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class ConstructionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class IngestionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class PlanningError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ObjectiveError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TuningError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class AnalysisError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace adhdnet
