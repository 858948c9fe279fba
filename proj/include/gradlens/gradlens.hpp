#pragma once

#include "gradlens/attribution.hpp"
#include "gradlens/autodiff.hpp"
#include "gradlens/error.hpp"
#include "gradlens/model_io.hpp"
#include "gradlens/models.hpp"
#include "gradlens/random.hpp"
#include "gradlens/report.hpp"
#include "gradlens/synthetic.hpp"
#include "gradlens/tensor.hpp"
#include "gradlens/text_data.hpp"
