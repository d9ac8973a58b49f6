"""Response parsing: totality over arbitrary model text, schema coercion,
serialization round-trips, and make/model/generation matching."""

import json
import random
import string

import pytest

import synthfix
from boxseed.core import (
    Dimensions,
    GroundTruthLabel,
    InvalidYearRangeError,
    VehicleType,
    YearRange,
)
from boxseed.parsing import (
    Abstention,
    AbstentionReason,
    MAX_DIM_M,
    MissingTruthError,
    Modification,
    ParseFailure,
    Prediction,
    VlmResponse,
    load_alias_table,
    modification_flags,
    normalize_name,
    outcome_from_dict,
    outcome_to_dict,
    parse_response,
    parse_year_range,
    response_from_dict,
    response_to_dict,
    serialize_response,
    vmmgr_match,
)
from boxseed.promptkit import PromptVariant

REFINED = PromptVariant.REFINED_VMMGR


def refined_json(**overrides):
    payload = {
        "significantly_occluded": False,
        "make": "Toyota",
        "model": "Camry",
        "generation_year_range": "2012-2014",
        "vehicle_type": "sedan",
        "configuration": None,
        "length_m": 4.8,
        "width_m": 1.8,
        "height_m": 1.44,
        "length_modification": None,
        "width_modification": None,
        "height_modification": None,
    }
    payload.update(overrides)
    return json.dumps(payload)


def truth(**overrides):
    kwargs = dict(
        dimensions=Dimensions(4.8, 1.8, 1.44),
        vehicle_type=VehicleType.SEDAN,
        make="Toyota",
        model="Camry",
        generation_range=YearRange(2012, 2014),
        modified_truth=False,
    )
    kwargs.update(overrides)
    return GroundTruthLabel(**kwargs)


class TestParseYearRange:
    @pytest.mark.parametrize(
        "text,expected",
        [
            ("2012-2014", (2012, 2014)),
            ("2012–2014", (2012, 2014)),  # en dash
            ("2012 - 2014", (2012, 2014)),
            ("  2019  ", (2019, 2019)),
        ],
    )
    def test_accepted(self, text, expected):
        assert parse_year_range(text) == YearRange(*expected)

    @pytest.mark.parametrize("text", ["", "unknown", "2012-", "12-14", "2012 to 2014", "201-2014"])
    def test_rejected(self, text):
        with pytest.raises(InvalidYearRangeError):
            parse_year_range(text)

    def test_reversed_range_rejected(self):
        with pytest.raises(InvalidYearRangeError):
            parse_year_range("2018-2012")

    def test_non_string_rejected(self):
        with pytest.raises(InvalidYearRangeError):
            parse_year_range(2014)


class TestExtractionStyles:
    def test_plain(self):
        outcome = parse_response(refined_json(), REFINED)
        assert isinstance(outcome, Prediction)

    def test_fenced(self):
        outcome = parse_response(f"```json\n{refined_json()}\n```", REFINED)
        assert isinstance(outcome, Prediction)

    def test_fence_without_language(self):
        outcome = parse_response(f"```\n{refined_json()}\n```", REFINED)
        assert isinstance(outcome, Prediction)

    def test_prose_before_and_after(self):
        text = f"Sure! Here is the result.\n\n{refined_json()}\n\nHope that helps."
        outcome = parse_response(text, REFINED)
        assert isinstance(outcome, Prediction)

    def test_braces_in_prose_before_object(self):
        text = "Note: {this is not JSON} but the answer follows " + refined_json()
        outcome = parse_response(text, REFINED)
        assert isinstance(outcome, Prediction)
        assert outcome.response.make == "Toyota"

    def test_nested_braces_in_strings(self):
        text = refined_json(configuration='has {braces} inside')
        outcome = parse_response(text, REFINED)
        assert isinstance(outcome, Prediction)
        assert outcome.response.configuration == "has {braces} inside"

    def test_no_json_at_all(self):
        outcome = parse_response("I cannot tell from these frames.", REFINED)
        assert isinstance(outcome, ParseFailure)

    def test_array_is_not_an_object(self):
        assert isinstance(parse_response("[1, 2, 3]", REFINED), ParseFailure)

    def test_empty_object_abstains_on_dims(self):
        assert parse_response("{}", REFINED) == Abstention(AbstentionReason.NULL_DIMS)

    def test_fixture_styles_all_parse(self):
        # The synthetic dataset exercises every styling mode end to end.
        for spec in synthfix.TRACKS:
            if not spec.has_replay:
                continue
            outcome = parse_response(synthfix.response_text(spec), REFINED)
            if spec.outcome == "prediction":
                assert isinstance(outcome, Prediction), spec.track_id
                assert outcome.response.dims.as_tuple() == synthfix.pred_dims(spec.track_id)
            elif spec.outcome == "occluded":
                assert outcome == Abstention(AbstentionReason.OCCLUDED), spec.track_id
            elif spec.outcome == "null_dims":
                assert outcome == Abstention(AbstentionReason.NULL_DIMS), spec.track_id
            else:
                assert isinstance(outcome, ParseFailure), spec.track_id


class TestOutcomeRules:
    def test_occlusion_wins_over_dims(self):
        text = refined_json(significantly_occluded=True)
        assert parse_response(text, REFINED) == Abstention(AbstentionReason.OCCLUDED)

    def test_occluded_accepts_string_booleans(self):
        text = refined_json(significantly_occluded="True")
        assert parse_response(text, REFINED) == Abstention(AbstentionReason.OCCLUDED)
        text = refined_json(significantly_occluded="false")
        assert isinstance(parse_response(text, REFINED), Prediction)

    def test_null_occluded_means_not_occluded(self):
        text = refined_json(significantly_occluded=None)
        assert isinstance(parse_response(text, REFINED), Prediction)

    @pytest.mark.parametrize("field", ["length_m", "width_m", "height_m"])
    def test_any_null_dim_abstains(self, field):
        outcome = parse_response(refined_json(**{field: None}), REFINED)
        assert outcome == Abstention(AbstentionReason.NULL_DIMS)

    def test_integer_dims_accepted(self):
        outcome = parse_response(refined_json(length_m=5), REFINED)
        assert isinstance(outcome, Prediction)
        assert outcome.response.dims.length_m == 5.0

    @pytest.mark.parametrize("bad", [0.0, -2.0, 31.0, True, "4.5", [4.5]])
    def test_unusable_dims_fail(self, bad):
        outcome = parse_response(refined_json(length_m=bad), REFINED)
        assert isinstance(outcome, ParseFailure)

    def test_nan_dims_fail(self):
        text = refined_json().replace("4.8", "NaN")
        assert isinstance(parse_response(text, REFINED), ParseFailure)

    def test_sanity_bound_is_thirty_meters(self):
        assert MAX_DIM_M == 30.0
        ok = parse_response(refined_json(length_m=30.0), REFINED)
        assert isinstance(ok, Prediction)

    def test_unknown_vehicle_type_fails(self):
        outcome = parse_response(refined_json(vehicle_type="coupe"), REFINED)
        assert isinstance(outcome, ParseFailure)

    def test_null_vehicle_type_allowed(self):
        outcome = parse_response(refined_json(vehicle_type=None), REFINED)
        assert isinstance(outcome, Prediction)
        assert outcome.response.vehicle_type is None

    def test_template_type_spellings_accepted(self):
        outcome = parse_response(refined_json(vehicle_type="pickup truck"), REFINED)
        assert outcome.response.vehicle_type is VehicleType.PICKUP_TRUCK

    def test_unknown_modification_fails(self):
        outcome = parse_response(refined_json(width_modification="widened"), REFINED)
        assert isinstance(outcome, ParseFailure)

    def test_modifications_parsed(self):
        outcome = parse_response(
            refined_json(width_modification="increased", height_modification="Decreased"),
            REFINED,
        )
        assert outcome.response.width_modification is Modification.INCREASED
        assert outcome.response.height_modification is Modification.DECREASED

    def test_integer_generation_year(self):
        outcome = parse_response(refined_json(generation_year_range=2015), REFINED)
        assert outcome.response.generation_year_range == YearRange(2015, 2015)

    def test_unparseable_generation_degrades_to_none(self):
        # Identity fields are peripheral: a bad year string must not void
        # usable dimensions.
        outcome = parse_response(refined_json(generation_year_range="unknown"), REFINED)
        assert isinstance(outcome, Prediction)
        assert outcome.response.generation_year_range is None

    def test_extra_keys_ignored(self):
        text = refined_json(extra_field="ignored", confidence=0.9)
        assert isinstance(parse_response(text, REFINED), Prediction)

    def test_basic_variant_sees_only_its_fields(self):
        outcome = parse_response(refined_json(), PromptVariant.BASIC)
        assert isinstance(outcome, Prediction)
        assert outcome.response.vehicle_type is None
        assert outcome.response.make is None

    def test_non_string_input(self):
        assert isinstance(parse_response(None, REFINED), ParseFailure)
        assert isinstance(parse_response(12.5, REFINED), ParseFailure)


class TestTotalityFuzz:
    def test_never_raises_on_soup(self):
        rng = random.Random(1234)
        alphabet = string.printable + "{}[]\"'::,,é中"
        base = refined_json()
        for i in range(400):
            if i % 3 == 0:
                text = "".join(rng.choice(alphabet) for _ in range(rng.randrange(0, 200)))
            elif i % 3 == 1:
                # Mutate valid JSON: delete or duplicate a random slice.
                a = rng.randrange(0, len(base))
                b = rng.randrange(a, min(len(base), a + 30))
                text = base[:a] + base[b:] if rng.random() < 0.5 else base[:b] + base[a:]
            else:
                keys = rng.sample(
                    ["length_m", "make", "vehicle_type", "significantly_occluded"], 2
                )
                text = refined_json(**{k: rng.choice([None, 1, "x", [], True]) for k in keys})
            outcome = parse_response(text, REFINED)
            assert isinstance(outcome, (Prediction, Abstention, ParseFailure))


class TestVlmResponseInvariants:
    def test_occluded_response_must_be_empty(self):
        with pytest.raises(ValueError):
            VlmResponse(significantly_occluded=True, make="Toyota")

    def test_dims_sanity_bound(self):
        with pytest.raises(ValueError):
            VlmResponse(dims=Dimensions(31.0, 2.0, 2.0))

    def test_prediction_requires_dims(self):
        with pytest.raises(ValueError):
            Prediction(VlmResponse(make="Toyota"))


class TestSerializeRoundTrip:
    def cases(self):
        yield parse_response(refined_json(), REFINED).response
        yield parse_response(
            refined_json(
                configuration="SuperCrew",
                width_modification="increased",
                generation_year_range="2009-2014",
                vehicle_type="pickup truck",
            ),
            REFINED,
        ).response
        for spec in synthfix.TRACKS:
            if spec.has_replay and spec.outcome == "prediction":
                yield parse_response(synthfix.response_text(spec), REFINED).response

    def test_parse_serialize_parse_is_identity(self):
        for response in self.cases():
            text = serialize_response(response, REFINED)
            reparsed = parse_response(text, REFINED)
            assert isinstance(reparsed, Prediction)
            assert reparsed.response == response
            assert serialize_response(reparsed.response, REFINED) == text

    def test_keys_in_schema_order(self):
        text = serialize_response(self.first_case(), REFINED)
        names = list(json.loads(text).keys())
        assert names == [
            "significantly_occluded",
            "make",
            "model",
            "generation_year_range",
            "vehicle_type",
            "configuration",
            "length_m",
            "width_m",
            "height_m",
            "length_modification",
            "width_modification",
            "height_modification",
        ]

    def first_case(self):
        return next(iter(self.cases()))

    def test_unrepresentable_fields_refused(self):
        response = self.first_case()  # carries make/model identity
        with pytest.raises(ValueError):
            serialize_response(response, PromptVariant.BASIC)

    def test_dims_only_response_fits_basic(self):
        response = VlmResponse(dims=Dimensions(4.5, 1.8, 1.4))
        text = serialize_response(response, PromptVariant.BASIC)
        assert list(json.loads(text)) == ["length_m", "width_m", "height_m"]


class TestNormalizeName:
    @pytest.mark.parametrize(
        "raw,expected",
        [
            ("F-150", "f150"),
            ("f150", "f150"),
            ("Mercedes-Benz", "mercedesbenz"),
            ("  Transit   Connect ", "transit connect"),
            ("CR-V", "crv"),
            ("Model.3!", "model3"),
        ],
    )
    def test_normalization(self, raw, expected):
        assert normalize_name(raw) == expected


class TestVmmgrMatch:
    def pred(self, **overrides):
        kwargs = dict(
            make="Toyota",
            model="Camry",
            generation_year_range=YearRange(2012, 2014),
            dims=Dimensions(4.8, 1.8, 1.44),
        )
        kwargs.update(overrides)
        return VlmResponse(**kwargs)

    def test_exact_match(self):
        assert vmmgr_match(self.pred(), truth()) is True

    def test_model_mismatch(self):
        assert vmmgr_match(self.pred(model="Corolla"), truth()) is False

    def test_punctuation_insensitive(self):
        t = truth(make="Ford", model="F-150", generation_range=YearRange(2009, 2014))
        p = self.pred(make="Ford", model="F150", generation_year_range=YearRange(2009, 2014))
        assert vmmgr_match(p, t) is True

    def test_generation_overlap_default(self):
        p = self.pred(generation_year_range=YearRange(2014, 2016))
        assert vmmgr_match(p, truth()) is True
        p = self.pred(generation_year_range=YearRange(2015, 2018))
        assert vmmgr_match(p, truth()) is False

    def test_generation_exact_mode(self):
        overlap_only = self.pred(generation_year_range=YearRange(2012, 2015))
        assert vmmgr_match(overlap_only, truth(), generation_mode="exact") is False
        exact = self.pred(generation_year_range=YearRange(2012, 2014))
        assert vmmgr_match(exact, truth(), generation_mode="exact") is True

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            vmmgr_match(self.pred(), truth(), generation_mode="fuzzy")

    def test_aliases_canonicalize_both_sides(self):
        aliases = {"Volkswagen": ["VW", "V.W."]}
        t = truth(make="Volkswagen", model="Golf", generation_range=YearRange(2015, 2021))
        p = self.pred(make="VW", model="Golf", generation_year_range=YearRange(2015, 2021))
        assert vmmgr_match(p, t) is False  # without the table
        assert vmmgr_match(p, t, aliases=aliases) is True

    def test_missing_truth_raises(self):
        with pytest.raises(MissingTruthError):
            vmmgr_match(self.pred(), truth(make=None))
        with pytest.raises(MissingTruthError):
            vmmgr_match(self.pred(), truth(generation_range=None))

    def test_incomplete_prediction_is_miss(self):
        assert vmmgr_match(self.pred(make=None), truth()) is False
        assert vmmgr_match(self.pred(generation_year_range=None), truth()) is False


class TestAliasTable:
    def test_load(self, tmp_path):
        path = tmp_path / "aliases.json"
        path.write_text(json.dumps({"Volkswagen": ["VW"]}), encoding="utf-8")
        assert load_alias_table(path) == {"Volkswagen": ["VW"]}

    def test_rejects_non_object(self, tmp_path):
        path = tmp_path / "aliases.json"
        path.write_text("[1, 2]", encoding="utf-8")
        with pytest.raises(ValueError):
            load_alias_table(path)

    def test_rejects_bad_entry(self, tmp_path):
        path = tmp_path / "aliases.json"
        path.write_text(json.dumps({"VW": "Volkswagen"}), encoding="utf-8")
        with pytest.raises(ValueError):
            load_alias_table(path)


class TestModificationFlags:
    def test_flagged(self):
        response = parse_response(refined_json(height_modification="increased"), REFINED)
        assert modification_flags(response.response) is True

    def test_unflagged(self):
        response = parse_response(refined_json(), REFINED)
        assert modification_flags(response.response) is False


class TestOutcomeSerialization:
    def test_prediction_round_trip(self):
        outcome = parse_response(
            refined_json(
                vehicle_type="SUV",
                generation_year_range="2015-2022",
                width_modification="increased",
                configuration="4-door",
            ),
            REFINED,
        )
        data = outcome_to_dict(outcome)
        assert data["kind"] == "prediction"
        assert outcome_from_dict(json.loads(json.dumps(data))) == outcome

    def test_abstention_round_trip(self):
        for reason in AbstentionReason:
            outcome = Abstention(reason)
            assert outcome_from_dict(outcome_to_dict(outcome)) == outcome

    def test_parse_failure_round_trip(self):
        outcome = ParseFailure("no JSON object found in: 'garbage'")
        assert outcome_from_dict(outcome_to_dict(outcome)) == outcome

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            outcome_from_dict({"kind": "mystery"})

    def test_response_dict_flattens_dims(self):
        response = VlmResponse(dims=Dimensions(4.5, 1.8, 1.4))
        data = response_to_dict(response)
        assert (data["length_m"], data["width_m"], data["height_m"]) == (4.5, 1.8, 1.4)
        assert "dims" not in data
        assert response_from_dict(data) == response

    def test_response_dict_none_dims(self):
        response = VlmResponse(make="Toyota")
        data = response_to_dict(response)
        assert data["length_m"] is None
        assert response_from_dict(data) == response
