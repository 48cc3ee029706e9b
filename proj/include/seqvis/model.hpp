#pragma once

// Conditional next-token estimation: the weighted objective, the tiny
// encoder-decoder, and constrained nucleus-sampling generation.

#include "seqvis/sampling.hpp"
#include "seqvis/transformer.hpp"
