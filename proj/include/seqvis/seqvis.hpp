#pragma once

#include "seqvis/augment.hpp"
#include "seqvis/batch.hpp"
#include "seqvis/codecs.hpp"
#include "seqvis/dataio.hpp"
#include "seqvis/eval.hpp"
#include "seqvis/geometry.hpp"
#include "seqvis/image.hpp"
#include "seqvis/mixer.hpp"
#include "seqvis/model.hpp"
#include "seqvis/rng.hpp"
#include "seqvis/svg.hpp"
#include "seqvis/vocab.hpp"
