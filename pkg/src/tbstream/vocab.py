"""Shared vocabulary: namespaces, predicate names, and label rankings.

This module is the single source of truth for how clinical fields map onto
the rule-engine vocabulary (snake_case data properties, as printed in the
published rule catalogs) and onto the RDF vocabulary (camelCase predicates,
as used by the query corpus). Several properties keep deliberately
inconsistent spellings because the source catalogs print them that way;
docs/vocabulary.md documents each mapping.
"""

from __future__ import annotations

# Namespaces
EX = "http://tbstream.example/onto#"
RDF_NS = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
RDFS_NS = "http://www.w3.org/2000/01/rdf-schema#"
OWL_NS = "http://www.w3.org/2002/07/owl#"
XSD_NS = "http://www.w3.org/2001/XMLSchema#"

RDF_TYPE = RDF_NS + "type"
RDFS_SUBCLASSOF = RDFS_NS + "subClassOf"
RDFS_DOMAIN = RDFS_NS + "domain"
RDFS_RANGE = RDFS_NS + "range"
OWL_CLASS = OWL_NS + "Class"
OWL_OBJECT_PROPERTY = OWL_NS + "ObjectProperty"
OWL_DATATYPE_PROPERTY = OWL_NS + "DatatypeProperty"
OWL_ANNOTATION_PROPERTY = OWL_NS + "AnnotationProperty"
OWL_EQUIVALENT_CLASS = OWL_NS + "equivalentClass"
OWL_DISJOINT_WITH = OWL_NS + "disjointWith"

XSD_INTEGER = XSD_NS + "integer"
XSD_DECIMAL = XSD_NS + "decimal"
XSD_DATETIME = XSD_NS + "dateTime"

PATIENT_CLASS = "TBPatient"

# The 13 binary symptom indicators, in canonical column order.
SYMPTOM_KEYS = (
    "fever_two_weeks",
    "coughing_blood",
    "sputum_blood",
    "night_sweats",
    "chest_pain",
    "back_pain",
    "shortness_breath",
    "weight_loss",
    "fatigue",
    "lumps_neck_armpit",
    "cough_phlegm_2to4w",
    "swollen_lymph",
    "appetite_loss",
)

# symptom key -> (rule-engine data property, RDF predicate local name)
SYMPTOM_VOCAB = {
    "fever_two_weeks": ("has_Fever_Status", "hasFeverStatus"),
    "coughing_blood": ("has_Haemoptysis", "hasHaemoptysis"),
    "sputum_blood": ("has_Sputum_Blood", "hasSputumBlood"),
    "night_sweats": ("has_Night_Sweats", "hasNightSweats"),
    "chest_pain": ("has_Chest_Pain", "hasChestPain"),
    "back_pain": ("has_Back_Pain", "hasBackPain"),
    "shortness_breath": ("has_Breathing_Difficulty", "hasBreathingDifficulty"),
    "weight_loss": ("has_Weight_Loss", "hasWeightLoss"),
    "fatigue": ("has_Fatigue", "hasFatigue"),
    "lumps_neck_armpit": ("has_Lumps_Neck_Armpit", "hasLumpsNeckArmpit"),
    "cough_phlegm_2to4w": ("has_Cough_Phlegm", "hasCoughPhlegm"),
    "swollen_lymph": ("has_Swollen_Lymph", "hasSwollenLymph"),
    "appetite_loss": ("has_Appetite_Loss", "hasAppetiteLoss"),
}

# Optional clinical columns (exercised by the synthetic generator's
# --clinical mode) -> (rule data property, RDF predicate, value kind).
# Value kind "int"/"float" parse numerically; "str" is passed through.
CLINICAL_VOCAB = {
    "cough_duration_days": ("has_Cough_Duration", "hasCoughDuration", "int"),
    "cough_duration_weeks": ("has_Cough_For_Duration", "hasCoughForDuration", "int"),
    "lymph_size_cm": ("has_Lymph_Enlargement_Value", "hasLymphEnlargementValue", "float"),
    "age_years": ("age_Years", "hasAgeYears", "int"),
    "sputum_positive": ("has_Sputum_Positive", "hasSputumPositive", "str"),
    "risk_level": ("has_Risk_Level", "hasRiskLevel", "str"),
    "weight_loss_grade": ("has_Weight_Loss", "hasWeightLoss", "str"),
    "under_dots": ("is_Under_DOTs", "isUnderDots", "str"),
    "symptom_improvement": ("has_Symptom_Improvement", "hasSymptomImprovement", "str"),
}

# Rule-DSL properties whose second argument names an individual rather
# than a literal value. Everything else is a data property.
OBJECT_PROPERTIES = frozenset({"undergoes", "undergoes_Again", "is_Prescribed"})

# Stage labels ranked most to least severe; classify_patient sorts by this.
STAGE_SEVERITY_ORDER = (
    "Severe_TB",
    "Confirmed_Pulmonary_TB",
    "Extra_Pulmonary_TB",
    "Suspected_TB",
    "Recovery_Stage_TB",
)
STAGE_RANK = {label: i for i, label in enumerate(STAGE_SEVERITY_ORDER)}


def classification_sort_key(label: str) -> tuple:
    """Severity-ranked sort key: known stages first, then alphabetical."""
    rank = STAGE_RANK.get(label)
    if rank is not None:
        return (0, rank, label)
    return (1, 0, label)


def default_alert_severity(label: str) -> str:
    """Map a classification label onto Info/Warning/Critical.

    The scale is a local construction (the source catalogs convey "how
    serious" without defining one) and is override-able via config.
    """
    if "Critical" in label or "Severe" in label or "Confirmed" in label:
        return "Critical"
    if "Suspected" in label or "Extra_Pulmonary" in label or "probable" in label:
        return "Warning"
    if "Recovery" in label:
        return "Info"
    return "Info"
