#pragma once

// Element type of every tensor. The library is float32; a double build of
// the same sources (ANIMA_F64) exists for finite-difference gradient checks.
// The two builds live in distinct inline namespaces so both can be linked
// into one binary.
#ifdef ANIMA_F64
#define ANIMA_NS f64
namespace anima::inline f64 {
using Scalar = double;
}
#else
#define ANIMA_NS f32
namespace anima::inline f32 {
using Scalar = float;
}
#endif
