"""Venue taxonomy: NAICS-style industry names grouped into 11 footfall categories.

The vocabulary below is the exact string match table used by
`ingest.map_top_category`. One industry name, "Freight Transportation
Arrangement", is claimed by both the transportation group and the
professional-services group in the source taxonomy; it is resolved to
transportation here, and the import-time assertion at the bottom guarantees
the table stays collision-free.
"""

CATEGORY_NAMES = {
    1: "Utilities and Construction",
    2: "Manufacturing",
    3: "Retail and Wholesale Trade",
    4: "Transportation and Warehousing",
    5: "Business and Professional Services",
    6: "Educational Services",
    7: "Health Care and Social Assistance",
    8: "Arts, Entertainment, and Recreation",
    9: "Accommodation and Food Services",
    10: "Public Administration",
    11: "Other Services",
}

N_CATEGORIES = 11

_GROUPS = {
    1: (
        "Building Material and Supplies Dealers",
        "Foundation, Structure, and Building Exterior Contractors",
        "Building Equipment Contractors",
        "Building Finishing Contractors",
        "Other Specialty Trade Contractors",
        "Utility System Construction",
        "Electric Power Generation, Transmission and Distribution",
    ),
    2: (
        "Bakeries and Tortilla Manufacturing",
        "Beverage Manufacturing",
        "Other Miscellaneous Manufacturing",
        "Glass and Glass Product Manufacturing",
        "Other Wood Product Manufacturing",
        "Metalworking Machinery Manufacturing",
        "Steel Product Manufacturing from Purchased Steel",
        "Greenhouse, Nursery, and Floriculture Production",
        "Printing and Related Support Activities",
    ),
    3: (
        "Shoe Stores",
        "Grocery Stores",
        "Clothing Stores",
        "Electronics and Appliance Stores",
        "Health and Personal Care Stores",
        "Gasoline Stations",
        "Used Merchandise Stores",
        "Automotive Parts, Accessories, and Tire Stores",
        "Jewelry, Luggage, and Leather Goods Stores",
        "Beer, Wine, and Liquor Stores",
        "Specialty Food Stores",
        "Home Furnishings Stores",
        "Other Motor Vehicle Dealers",
        "Office Supplies, Stationery, and Gift Stores",
        "General Merchandise Stores, including Warehouse Clubs and Supercenters",
        "Department Stores",
        "Book Stores and News Dealers",
        "Automobile Dealers",
        "Furniture Stores",
        "Lawn and Garden Equipment and Supplies Stores",
        "Hardware, and Plumbing and Heating Equipment and Supplies Merchant Wholesalers",
        "Machinery, Equipment, and Supplies Merchant Wholesalers",
        "Drugs and Druggists' Sundries Merchant Wholesalers",
        "Chemical and Allied Products Merchant Wholesalers",
        "Petroleum and Petroleum Products Merchant Wholesalers",
        "Motor Vehicle and Motor Vehicle Parts and Supplies Merchant Wholesalers",
        "Miscellaneous Durable Goods Merchant Wholesalers",
        "Grocery and Related Product Merchant Wholesalers",
        "Household Appliances and Electrical and Electronic Goods Merchant Wholesalers",
        "Lumber and Other Construction Materials Merchant Wholesalers",
        "Direct Selling Establishments",
        "Other Miscellaneous Store Retailers",
        "Professional and Commercial Equipment and Supplies Merchant Wholesalers",
        "Sporting Goods, Hobby, and Musical Instrument Stores",
    ),
    4: (
        "Support Activities for Air Transportation",
        "Specialized Freight Trucking",
        "Rail Transportation",
        "Taxi and Limousine Service",
        "Other Transit and Ground Passenger Transportation",
        "Transit and Ground Passenger Transportation",
        "Scenic and Sightseeing Transportation",
        "Support Activities for Road Transportation",
        "Freight Transportation Arrangement",
        "Support Activities for Water Transportation",
        "Warehousing and Storage",
        "Automotive Equipment Rental and Leasing",
        "Commercial and Industrial Machinery and Equipment Rental and Leasing",
        "Interurban and Rural Bus Transportation",
        "Postal Service",
    ),
    5: (
        "Investigation and Security Services",
        "Activities Related to Credit Intermediation",
        "Offices of Real Estate Agents and Brokers",
        "Other Professional, Scientific, and Technical Services",
        "Accounting, Tax Preparation, Bookkeeping, and Payroll Services",
        "Management, Scientific, and Technical Consulting Services",
        "Advertising, Public Relations, and Related Services",
        "Legal Services",
        "Data Processing, Hosting, and Related Services",
        "Architectural, Engineering, and Related Services",
        "Specialized Design Services",
        "Business Support Services",
        "Employment Services",
        "Travel Arrangement and Reservation Services",
        # "Freight Transportation Arrangement" belongs to group 4
        "Management of Companies and Enterprises",
        "Activities Related to Real Estate",
        "Agencies, Brokerages, and Other Insurance Related Activities",
        "Cable and Other Subscription Programming",
        "Consumer Goods Rental",
        "Depository Credit Intermediation",
        "General Rental Centers",
        "Insurance Carriers",
        "Lessors of Real Estate",
        "Motion Picture and Video Industries",
        "Nondepository Credit Intermediation",
        "Other Financial Investment Activities",
        "Other Information Services",
        "Radio and Television Broadcasting",
        "Sound Recording Industries",
        "Wired and Wireless Telecommunications Carriers",
    ),
    6: (
        "Elementary and Secondary Schools",
        "Colleges, Universities, and Professional Schools",
        "Junior Colleges",
        "Technical and Trade Schools",
        "Other Schools and Instruction",
        "Educational Support Services",
    ),
    7: (
        "Offices of Physicians",
        "Offices of Other Health Practitioners",
        "Specialty (except Psychiatric and Substance Abuse) Hospitals",
        "General Medical and Surgical Hospitals",
        "Psychiatric and Substance Abuse Hospitals",
        "Outpatient Care Centers",
        "Nursing Care Facilities (Skilled Nursing Facilities)",
        "Continuing Care Retirement Communities and Assisted Living Facilities for the Elderly",
        "Home Health Care Services",
        "Individual and Family Services",
        "Community Food and Housing, and Emergency and Other Relief Services",
        "Residential Intellectual and Developmental Disability, Mental Health, "
        "and Substance Abuse Facilities",
        "Child Day Care Services",
        "Medical and Diagnostic Laboratories",
        "Nursing and Residential Care Facilities",
        "Offices of Dentists",
        "Other Ambulatory Health Care Services",
    ),
    8: (
        "Museums, Historical Sites, and Similar Institutions",
        "Amusement Parks and Arcades",
        "Spectator Sports",
        "Other Amusement and Recreation Industries",
        "Performing Arts Companies",
        "Promoters of Performing Arts, Sports, and Similar Events",
        "Social Advocacy Organizations",
        "Civic and Social Organizations",
        "Gambling Industries",
    ),
    9: (
        "Traveler Accommodation",
        "Special Food Services",
        "Restaurants and Other Eating Places",
        "Drinking Places (Alcoholic Beverages)",
        "RV (Recreational Vehicle) Parks and Recreational Camps",
    ),
    10: (
        "Justice, Public Order, and Safety Activities",
        "Administration of Economic Programs",
        "Administration of Human Resource Programs",
        "National Security and International Affairs",
    ),
    11: (
        "Florists",
        "Other Personal Services",
        "Religious Organizations",
        "Personal and Household Goods Repair and Maintenance",
        "Drycleaning and Laundry Services",
        "Death Care Services",
        "Personal Care Services",
        "Social Assistance",
        "Grantmaking and Giving Services",
        "Couriers and Express Delivery Services",
        "Waste Management and Remediation Services",
        "Remediation and Other Waste Management Services",
        "Services to Buildings and Dwellings",
        "Waste Treatment and Disposal",
        "Waste Collection",
        "Automotive Repair and Maintenance",
        "Electronic and Precision Equipment Repair and Maintenance",
    ),
}


def _build_lookup():
    table = {}
    for cat_id, names in _GROUPS.items():
        for name in names:
            if name in table:
                raise AssertionError(
                    f"industry name {name!r} mapped to both category {table[name]} and {cat_id}")
            table[name] = cat_id
    return table

CATEGORY_OF_INDUSTRY = _build_lookup()
