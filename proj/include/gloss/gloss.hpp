#pragma once

// Umbrella header for the translation-aware interlinear glossing library.

#include "gloss/autodiff.hpp"
#include "gloss/checkpoint.hpp"
#include "gloss/evaluation.hpp"
#include "gloss/heatmap.hpp"
#include "gloss/igt.hpp"
#include "gloss/model.hpp"
#include "gloss/nn.hpp"
#include "gloss/segmentation.hpp"
#include "gloss/training.hpp"
#include "gloss/translation.hpp"
